#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "tiletensor/linalg.hpp"

using namespace tiletensor;

namespace {

DenseTensor random_tensor(std::vector<std::int64_t> shape, std::mt19937_64& rng) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  std::uniform_real_distribution<double> dist(-2, 2);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = dist(rng);
  return DenseTensor(std::move(shape), std::move(v));
}

DenseTensor identity(std::int64_t n) {
  DenseTensor out = DenseTensor::zeros({n, n});
  for (std::int64_t i = 0; i < n; ++i) out.at(std::array{i, i}) = 1.0;
  return out;
}

DenseTensor matvec_oracle(const DenseTensor& m, const DenseTensor& v) {
  return dense_matmul(m, v.reshape({static_cast<std::int64_t>(v.size()), 1}))
      .reshape({m.extent(0)});
}

TileTensor pack_matvec_a_m(const DenseTensor& m, std::int64_t t1, std::int64_t t2,
                           Session& s) {
  return pack(m, TileTensorShape({DimSpec{m.extent(0), 1, t1}, DimSpec{m.extent(1), 1, t2}}),
              s);
}

TileTensor pack_matvec_a_v(const DenseTensor& v, std::int64_t t1, std::int64_t t2,
                           Session& s) {
  const auto b = static_cast<std::int64_t>(v.size());
  return pack(v.reshape({1, b}), TileTensorShape({DimSpec{1, t1, t1}, DimSpec{b, 1, t2}}), s);
}

TileTensor pack_matvec_b_m(const DenseTensor& m, std::int64_t t1, std::int64_t t2,
                           Session& s) {
  const DenseTensor mt = transpose2d(m);
  return pack(mt, TileTensorShape({DimSpec{mt.extent(0), 1, t1}, DimSpec{mt.extent(1), 1, t2}}),
              s);
}

TileTensor pack_matvec_b_v(const DenseTensor& v, std::int64_t t1, std::int64_t t2,
                           Session& s) {
  const auto b = static_cast<std::int64_t>(v.size());
  return pack(v.reshape({b, 1}), TileTensorShape({DimSpec{b, 1, t1}, DimSpec{1, t2, t2}}), s);
}

}  // namespace

TEST_CASE("formula a: identity case") {
  Session session(4, 8);
  const TileTensor tm = pack_matvec_a_m(identity(2), 2, 2, session);
  const TileTensor tv = pack_matvec_a_v(DenseTensor({2}, {3, 5}), 2, 2, session);
  const TileTensor r = matvec_a(tm, tv);
  CHECK(format_shape(r.shape()) == "[2/2,1?/2]");
  CHECK(unpack_vector(r) == DenseTensor({2}, {3, 5}));
}

TEST_CASE("formula a: random oracle match") {
  std::mt19937_64 rng(201);
  Session session(8, 8);
  const DenseTensor m = random_tensor({5, 6}, rng);
  const DenseTensor v = random_tensor({6}, rng);
  const TileTensor r = matvec_a(pack_matvec_a_m(m, 2, 4, session),
                                pack_matvec_a_v(v, 2, 4, session));
  CHECK(max_rel_diff(unpack_vector(r), matvec_oracle(m, v)) < 1e-9);
}

TEST_CASE("formula a: degenerate tiles reproduce row and column order") {
  std::mt19937_64 rng(203);
  const DenseTensor m = random_tensor({3, 5}, rng);
  const DenseTensor v = random_tensor({5}, rng);
  for (const auto& [t1, t2] : std::vector<std::pair<std::int64_t, std::int64_t>>{{1, 8}, {8, 1}}) {
    Session session(8, 8);
    const TileTensor r = matvec_a(pack_matvec_a_m(m, t1, t2, session),
                                  pack_matvec_a_v(v, t1, t2, session));
    CHECK(max_rel_diff(unpack_vector(r), matvec_oracle(m, v)) < 1e-9);
  }
}

TEST_CASE("formula b: replicated output feeds formula a at no processing cost") {
  std::mt19937_64 rng(207);
  Session session(8, 8);
  const DenseTensor m1 = random_tensor({6, 5}, rng);
  const DenseTensor m2 = random_tensor({4, 6}, rng);
  const DenseTensor v = random_tensor({5}, rng);

  const TileTensor r1 = matvec_b(pack_matvec_b_m(m1, 2, 4, session),
                                 pack_matvec_b_v(v, 2, 4, session));
  CHECK(format_shape(r1.shape()) == "[*/2,6/4]");
  CHECK(max_rel_diff(unpack_vector(r1), matvec_oracle(m1, v)) < 1e-9);
  // dimension 1 replicas are slot-identical
  for (const auto& tile : r1.tiles())
    for (int h = 0; h < 8; ++h) CHECK(tile.slots()[h] == tile.slots()[h % 4]);

  const auto masks_before = session.cost_report().mask_multiplications;
  const TileTensor r2 = matvec_a(pack_matvec_a_m(m2, 2, 4, session), r1);
  CHECK(session.cost_report().mask_multiplications == masks_before);
  CHECK(max_rel_diff(unpack_vector(r2), matvec_oracle(m2, matvec_oracle(m1, v))) < 1e-9);
}

TEST_CASE("matmul formulas on identity and random operands") {
  std::mt19937_64 rng(211);
  Session session(8, 8);
  const DenseTensor m = random_tensor({2, 2}, rng);

  // identity x m via formula a
  const TileTensor ti = pack(identity(2).reshape({2, 2, 1}),
                             TileTensorShape({DimSpec{2, 1, 2}, DimSpec{2, 1, 2}, DimSpec{1, 2, 2}}),
                             session);
  const TileTensor tm = pack(m.reshape({1, 2, 2}),
                             TileTensorShape({DimSpec{1, 2, 2}, DimSpec{2, 1, 2}, DimSpec{2, 1, 2}}),
                             session);
  const TileTensor r = matmul_a(ti, tm);
  CHECK(format_shape(r.shape()) == "[2/2,1?/2,2/2]");
  CHECK(max_rel_diff(unpack(r).reshape({2, 2}), m) < 1e-9);

  // random sizes via both formulas
  const DenseTensor m1 = random_tensor({3, 4}, rng);
  const DenseTensor m2 = random_tensor({4, 5}, rng);
  const DenseTensor expect = dense_matmul(m1, m2);
  {
    Session s8(8, 8);
    const TileTensor a = pack(m1.reshape({3, 4, 1}),
                              TileTensorShape({DimSpec{3, 1, 2}, DimSpec{4, 1, 2}, DimSpec{1, 2, 2}}),
                              s8);
    const TileTensor b = pack(m2.reshape({1, 4, 5}),
                              TileTensorShape({DimSpec{1, 2, 2}, DimSpec{4, 1, 2}, DimSpec{5, 1, 2}}),
                              s8);
    CHECK(max_rel_diff(unpack(matmul_a(a, b)).reshape({3, 5}), expect) < 1e-9);
  }
  {
    Session s8(8, 8);
    const TileTensor a = pack(transpose2d(m1).reshape({4, 3, 1}),
                              TileTensorShape({DimSpec{4, 1, 2}, DimSpec{3, 1, 2}, DimSpec{1, 2, 2}}),
                              s8);
    const TileTensor b = pack(m2.reshape({4, 1, 5}),
                              TileTensorShape({DimSpec{4, 1, 2}, DimSpec{1, 2, 2}, DimSpec{5, 1, 2}}),
                              s8);
    const TileTensor rb = matmul_b(a, b);
    CHECK(format_shape(rb.shape()) == "[*/2,3/2,5/2]");
    CHECK(max_rel_diff(unpack(rb).reshape({3, 5}), expect) < 1e-9);
    // replication of output dimension 1 is slot-identical
    for (const auto& tile : rb.tiles())
      for (int h = 0; h < 8; ++h) CHECK(std::abs(tile.slots()[h] - tile.slots()[h % 4]) < 1e-12);
  }
}

TEST_CASE("matmul_b output chains into matmul_a") {
  std::mt19937_64 rng(213);
  Session session(8, 8);
  const DenseTensor x = random_tensor({4, 3}, rng);
  const DenseTensor m1 = random_tensor({5, 4}, rng);
  const DenseTensor m2 = random_tensor({2, 5}, rng);
  // stage 1 (formula b): M1 X, output [*/t1, 5/t2, 3/t3]
  const TileTensor tm1 = pack(transpose2d(m1).reshape({4, 5, 1}),
                              TileTensorShape({DimSpec{4, 1, 2}, DimSpec{5, 1, 2}, DimSpec{1, 2, 2}}),
                              session);
  const TileTensor tx = pack(x.reshape({4, 1, 3}),
                             TileTensorShape({DimSpec{4, 1, 2}, DimSpec{1, 2, 2}, DimSpec{3, 1, 2}}),
                             session);
  const TileTensor s1 = matmul_b(tm1, tx);
  // stage 2 (formula a): M2 (M1 X)
  const TileTensor tm2 = pack(m2.reshape({2, 5, 1}),
                              TileTensorShape({DimSpec{2, 1, 2}, DimSpec{5, 1, 2}, DimSpec{1, 2, 2}}),
                              session);
  const TileTensor s2 = matmul_a(tm2, s1);
  const DenseTensor expect = dense_matmul(m2, dense_matmul(m1, x));
  CHECK(max_rel_diff(unpack(s2).reshape({2, 3}), expect) < 1e-9);
}

TEST_CASE("special-case packings all run through the same product body") {
  std::mt19937_64 rng(217);
  const std::int64_t s = 16;
  const DenseTensor m = random_tensor({5, 3}, rng);
  const DenseTensor v = random_tensor({3}, rng);
  const DenseTensor expect = matvec_oracle(m, v);

  for (const auto& method :
       {PackingMethod::row_order(), PackingMethod::column_order(), PackingMethod::input_packing(),
        PackingMethod::general({4, 4})}) {
    Session session(s, 8);
    const OperandRole mrole =
        method.kind == PackingMethod::Kind::input_packing ? OperandRole::lhs : OperandRole::matrix;
    const OperandRole vrole =
        method.kind == PackingMethod::Kind::input_packing ? OperandRole::rhs : OperandRole::vector;
    const TileTensor tm = pack_for_method(m, mrole, method, session);
    const TileTensor tv = pack_for_method(v, vrole, method, session);
    const TileTensor r = tt_sum(tt_mul(tm, tv), sum_dim_for(method));
    CHECK(max_rel_diff(unpack_vector(r), expect) < 1e-9);
  }

  // batch packing: same body after a trivial rank lift
  Session session(s, 8);
  const DenseTensor batch = random_tensor({3, 7}, rng);  // 7 samples
  const TileTensor tw = pack_for_method(m, OperandRole::matrix, PackingMethod::batch_packing(),
                                        session);
  const TileTensor tb = pack_for_method(batch, OperandRole::vector,
                                        PackingMethod::batch_packing(), session);
  CHECK(format_shape(tw.shape()) == "[5,3,*/16]");
  CHECK(format_shape(tb.shape()) == "[3,7/16]");
  session.reset_counters();
  const TileTensor r = tt_sum(tt_mul(tw, with_leading_unit_dim(tb)), 2);
  CHECK(session.cost_report().rotations == 0);
  CHECK(max_rel_diff(unpack(r).reshape({5, 7}), dense_matmul(m, batch)) < 1e-9);
}

TEST_CASE("input packing picks the smallest dividing tile extent") {
  std::mt19937_64 rng(219);
  Session session(16, 8);
  const DenseTensor m = random_tensor({4, 3}, rng);
  const TileTensor tm = pack_for_method(m, OperandRole::lhs, PackingMethod::input_packing(),
                                        session);
  CHECK(format_shape(tm.shape()) == "[3/4,4/4]");  // t1 = 4, smallest divisor of 16 >= 3
  const DenseTensor big = random_tensor({2, 17}, rng);
  CHECK_THROWS_AS(pack_for_method(big, OperandRole::lhs, PackingMethod::input_packing(), session),
                  ShapeError);
}

TEST_CASE("general packing uses all slots where the classics waste them") {
  Session session(1024, 2);
  std::mt19937_64 rng(223);
  const DenseTensor m = random_tensor({768, 768}, rng);
  const TileTensor general =
      pack_for_method(m, OperandRole::matrix, PackingMethod::general({4, 256}), session);
  CHECK(general.tile_count() == 576);
  CHECK(general.shape().used_slots() == general.shape().total_slots());
  const TileTensor rows =
      pack_for_method(m, OperandRole::matrix, PackingMethod::row_order(), session);
  CHECK(rows.tile_count() == 768);
}

TEST_CASE("pipeline: identities leave the vector unchanged") {
  Session session(8, 8);
  const std::vector<DenseTensor> ms{identity(3), identity(3)};
  const DenseTensor v({3}, {1, 2, 3});
  const auto res = pipeline(ms, v, {2, 4}, session);
  CHECK(max_rel_diff(unpack_vector(res.out), v) < 1e-12);
}

TEST_CASE("pipeline: a single stage is just the transposed product") {
  std::mt19937_64 rng(241);
  Session session(8, 8);
  const DenseTensor m = random_tensor({5, 6}, rng);
  const DenseTensor v = random_tensor({6}, rng);
  const auto res = pipeline(std::vector{m}, v, {2, 4}, session);
  CHECK(format_shape(res.out.shape()) == "[*/2,5/4]");
  CHECK(max_rel_diff(unpack_vector(res.out), matvec_oracle(m, v)) < 1e-9);
  CHECK(res.cost.mask_multiplications == 0);
}

TEST_CASE("pipeline: three random stages match the oracle") {
  std::mt19937_64 rng(227);
  Session session(32, 8);
  const std::vector<DenseTensor> ms{random_tensor({5, 7}, rng), random_tensor({9, 5}, rng),
                                    random_tensor({7, 9}, rng)};
  const DenseTensor v = random_tensor({7}, rng);
  const auto res = pipeline(ms, v, {4, 8}, session);
  DenseTensor expect = v;
  for (const auto& m : ms) expect = matvec_oracle(m, expect);
  CHECK(max_rel_diff(unpack_vector(res.out), expect) < 1e-9);
  CHECK(res.cost.mask_multiplications > 0);  // one clean before stage 3
}

TEST_CASE("pipeline: a two-stage chain spends no masks or replications") {
  std::mt19937_64 rng(229);
  Session session(16, 8);
  const std::vector<DenseTensor> ms{random_tensor({6, 4}, rng), random_tensor({3, 6}, rng)};
  const DenseTensor v = random_tensor({4}, rng);
  const auto res = pipeline(ms, v, {4, 4}, session);
  CHECK(res.cost.mask_multiplications == 0);
  DenseTensor expect = v;
  for (const auto& m : ms) expect = matvec_oracle(m, expect);
  CHECK(max_rel_diff(unpack_vector(res.out), expect) < 1e-9);
}

TEST_CASE("pipeline: four stages insert a mask-and-replicate step per even-odd seam") {
  std::mt19937_64 rng(251);
  Session session(16, 16);
  const std::vector<DenseTensor> ms{random_tensor({5, 4}, rng), random_tensor({7, 5}, rng),
                                    random_tensor({6, 7}, rng), random_tensor({3, 6}, rng)};
  const DenseTensor v = random_tensor({4}, rng);
  const auto res = pipeline(ms, v, {4, 4}, session);
  DenseTensor expect = v;
  for (const auto& m : ms) expect = matvec_oracle(m, expect);
  CHECK(max_rel_diff(unpack_vector(res.out), expect) < 1e-9);
  // exactly one cleanup seam: between stage 2's output and stage 3
  CHECK(res.cost.mask_multiplications == 2);  // [7/4,1/4] -> two tiles masked
}

TEST_CASE("pipeline validates the chain and reports the failing stage on exhaustion") {
  Session session(8, 8);
  std::mt19937_64 rng(233);
  CHECK_THROWS_AS(pipeline(std::vector<DenseTensor>{random_tensor({3, 4}, rng)},
                           random_tensor({5}, rng), {2, 4}, session),
                  ShapeError);
  Session shallow(8, 2);
  const std::vector<DenseTensor> ms{random_tensor({4, 4}, rng), random_tensor({4, 4}, rng),
                                    random_tensor({4, 4}, rng)};
  try {
    (void)pipeline(ms, random_tensor({4}, rng), {2, 4}, shallow);
    FAIL("expected depth exhaustion");
  } catch (const DepthExhaustedError& e) {
    CHECK(std::string(e.what()).find("stage") != std::string::npos);
  }
}

TEST_CASE("tile factorization search scores every divisor pair") {
  std::mt19937_64 rng(239);
  const std::vector<DenseTensor> ms{random_tensor({4, 6}, rng), random_tensor({5, 4}, rng)};
  const DenseTensor v = random_tensor({6}, rng);
  const auto choices = score_tile_factorizations(ms, v, 16, 8);
  CHECK(choices.size() == 5);  // 1,2,4,8,16
  for (std::size_t i = 1; i < choices.size(); ++i)
    CHECK(choices[i - 1].cost.rotations <= choices[i].cost.rotations);
}
