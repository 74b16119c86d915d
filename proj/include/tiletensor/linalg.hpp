#pragma once

// Matrix-vector and matrix-matrix multiplication over tile tensors.  Every
// product is the same two-line body -- elementwise multiply, then sum over
// the contraction dimension -- applied to operands packed in one of two
// complementary layouts:
//
//   matvec_a:  [a/t1, b/t2]    x [*/t1, b/t2]     -> sum dim 2 -> [a/t1, 1?/t2]
//   matvec_b:  [b/t1, a/t2]    x [b/t1, */t2]     -> sum dim 1 -> [*/t1, a/t2]
//   matmul_a:  [a,b,*]/(t1,t2,t3) x [*,b,c]       -> sum dim 2
//   matmul_b:  [b,a,*]/(t1,t2,t3) x [b,*,c]       -> sum dim 1
//
// The b-forms pack the left matrix transposed and emit a result that is
// replicated where the a-forms want their vector operand, so the two can be
// chained with no processing in between.  Going the other way takes a mask
// and a replication, which pipeline() inserts.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "tiletensor/dense.hpp"
#include "tiletensor/tile_tensor.hpp"

namespace tiletensor {

namespace detail {

inline void require_replicated(const TileTensor& t, std::size_t dim0, const char* who) {
  const DimSpec& ds = t.shape().dim(dim0);
  if (!(ds.n == 1 && ds.d == ds.t))
    throw ShapeError(std::string(who) + ": operand dimension " + std::to_string(dim0 + 1) +
                     " must be fully replicated, got " + format_shape(t.shape()));
}

}  // namespace detail

inline TileTensor matvec_a(const TileTensor& m, const TileTensor& v,
                           std::optional<SumVariant> variant = std::nullopt) {
  if (m.shape().rank() != 2 || v.shape().rank() != 2)
    throw ShapeError("matvec_a expects rank-2 operands");
  detail::require_replicated(v, 0, "matvec_a");
  return tt_sum(tt_mul(m, v), 2, variant);
}

inline TileTensor matvec_b(const TileTensor& m_transposed, const TileTensor& v,
                           std::optional<SumVariant> variant = std::nullopt) {
  if (m_transposed.shape().rank() != 2 || v.shape().rank() != 2)
    throw ShapeError("matvec_b expects rank-2 operands");
  detail::require_replicated(v, 1, "matvec_b");
  return tt_sum(tt_mul(m_transposed, v), 1, variant);
}

inline TileTensor matmul_a(const TileTensor& m1, const TileTensor& m2,
                           std::optional<SumVariant> variant = std::nullopt) {
  if (m1.shape().rank() != 3 || m2.shape().rank() != 3)
    throw ShapeError("matmul_a expects rank-3 operands");
  detail::require_replicated(m1, 2, "matmul_a");
  detail::require_replicated(m2, 0, "matmul_a");
  return tt_sum(tt_mul(m1, m2), 2, variant);
}

inline TileTensor matmul_b(const TileTensor& m1_transposed, const TileTensor& m2,
                           std::optional<SumVariant> variant = std::nullopt) {
  if (m1_transposed.shape().rank() != 3 || m2.shape().rank() != 3)
    throw ShapeError("matmul_b expects rank-3 operands");
  detail::require_replicated(m1_transposed, 2, "matmul_b");
  detail::require_replicated(m2, 1, "matmul_b");
  return tt_sum(tt_mul(m1_transposed, m2), 1, variant);
}

// --- classical packings ------------------------------------------------------

struct PackingMethod {
  enum class Kind { row_order, column_order, input_packing, batch_packing, general };
  Kind kind = Kind::general;
  std::vector<std::int64_t> tile;  // general: t1,t2[,t3]

  static PackingMethod row_order() { return {Kind::row_order, {}}; }
  static PackingMethod column_order() { return {Kind::column_order, {}}; }
  static PackingMethod input_packing() { return {Kind::input_packing, {}}; }
  static PackingMethod batch_packing() { return {Kind::batch_packing, {}}; }
  static PackingMethod general(std::vector<std::int64_t> tile) {
    return {Kind::general, std::move(tile)};
  }
};

enum class OperandRole { matrix, vector, lhs, rhs };

// Contraction dimension the two-line product body sums over for a method.
inline int sum_dim_for(const PackingMethod& method) {
  return method.kind == PackingMethod::Kind::input_packing ? 1 : 2;
}

namespace detail {

inline std::int64_t smallest_divisor_at_least(std::int64_t s, std::int64_t b) {
  for (std::int64_t t = b; t <= s; ++t) {
    if (s % t == 0) return t;
  }
  return s;
}

}  // namespace detail

// Packs a matrix or vector for one of the named methods.  Roles:
//   matrix/vector -- the [a/t1,b/t2] x [*/t1,b/t2] form (sum over dim 2),
//   lhs/rhs       -- the transposed [b/t1,a/t2] x [b/t1,*/t2] form (sum over
//                    dim 1); the lhs is transposed here, in plaintext.
// batch_packing packs weights as [a,b,*/s] and data as [x,n/s].
inline TileTensor pack_for_method(const DenseTensor& m, OperandRole role,
                                  const PackingMethod& method, Session& session) {
  const std::int64_t s = session.slot_count();

  if (method.kind == PackingMethod::Kind::batch_packing) {
    if (role == OperandRole::matrix || role == OperandRole::lhs) {
      if (m.rank() != 2) throw ShapeError("batch packing expects a rank-2 weight matrix");
      const auto a = m.extent(0), b = m.extent(1);
      TileTensorShape shape({DimSpec{a, 1, 1}, DimSpec{b, 1, 1}, DimSpec{1, s, s}});
      return pack(m.reshape({a, b, 1}), shape, session);
    }
    if (m.rank() != 2) throw ShapeError("batch packing expects data of shape [x, n]");
    const auto x = m.extent(0), n = m.extent(1);
    if (n > s) throw ShapeError("batch size exceeds the slot count");
    return pack(m, TileTensorShape({DimSpec{x, 1, 1}, DimSpec{n, 1, s}}), session);
  }

  std::int64_t t1 = 1, t2 = s;
  switch (method.kind) {
    case PackingMethod::Kind::row_order:
      t1 = 1;
      t2 = s;
      break;
    case PackingMethod::Kind::column_order:
      t1 = s;
      t2 = 1;
      break;
    case PackingMethod::Kind::input_packing: {
      // t1 is the smallest divisor of s that fits a whole column of the
      // transposed matrix (a row of M).
      const std::int64_t b =
          (role == OperandRole::lhs || role == OperandRole::matrix) ? m.extent(1)
                                                                    : m.extent(0);
      if (b > s) throw ShapeError("input packing requires the contracted extent <= slot count");
      t1 = detail::smallest_divisor_at_least(s, b);
      t2 = s / t1;
      break;
    }
    case PackingMethod::Kind::general:
      if (method.tile.size() != 2) throw ShapeError("general packing here expects two tile extents");
      t1 = method.tile[0];
      t2 = method.tile[1];
      if (t1 * t2 != s) throw ShapeError("tile extents must multiply to the slot count");
      break;
    default:
      break;
  }

  const bool transposed_form =
      method.kind == PackingMethod::Kind::input_packing || role == OperandRole::lhs ||
      role == OperandRole::rhs;
  switch (role) {
    case OperandRole::matrix: {
      if (m.rank() != 2) throw ShapeError("matrix role expects a rank-2 tensor");
      if (transposed_form) {
        const DenseTensor mt = transpose2d(m);
        return pack(mt, TileTensorShape({DimSpec{mt.extent(0), 1, t1},
                                         DimSpec{mt.extent(1), 1, t2}}),
                    session);
      }
      return pack(m, TileTensorShape({DimSpec{m.extent(0), 1, t1}, DimSpec{m.extent(1), 1, t2}}),
                  session);
    }
    case OperandRole::lhs: {
      if (m.rank() != 2) throw ShapeError("lhs role expects a rank-2 tensor");
      const DenseTensor mt = transpose2d(m);
      return pack(mt,
                  TileTensorShape({DimSpec{mt.extent(0), 1, t1}, DimSpec{mt.extent(1), 1, t2}}),
                  session);
    }
    case OperandRole::vector: {
      const std::int64_t b = static_cast<std::int64_t>(m.size());
      if (transposed_form)
        return pack(m.reshape({b, 1}),
                    TileTensorShape({DimSpec{b, 1, t1}, DimSpec{1, t2, t2}}), session);
      return pack(m.reshape({1, b}), TileTensorShape({DimSpec{1, t1, t1}, DimSpec{b, 1, t2}}),
                  session);
    }
    case OperandRole::rhs: {
      const std::int64_t b = static_cast<std::int64_t>(m.size());
      return pack(m.reshape({b, 1}), TileTensorShape({DimSpec{b, 1, t1}, DimSpec{1, t2, t2}}),
                  session);
    }
  }
  throw std::logic_error("unreachable");
}

// --- the alternating pipeline ------------------------------------------------

struct PipelineResult {
  TileTensor out;
  CostReport cost;
};

// Computes M_k(...(M_2(M_1 V))) under one tile choice.  Odd stages (1-based)
// pack their matrix transposed and sum dimension 1; their output is
// replicated exactly where the next stage wants it.  Even-stage outputs end
// in [a/t1, 1?/t2] form, so a mask and a replication are inserted before the
// next odd stage.
inline PipelineResult pipeline(std::span<const DenseTensor> matrices, const DenseTensor& v,
                               std::pair<std::int64_t, std::int64_t> tile, Session& session) {
  if (matrices.empty()) throw ShapeError("pipeline needs at least one matrix");
  const auto [t1, t2] = tile;
  if (t1 * t2 != session.slot_count())
    throw ShapeError("tile extents must multiply to the slot count");

  std::int64_t width = static_cast<std::int64_t>(v.size());
  for (std::size_t k = 0; k < matrices.size(); ++k) {
    if (matrices[k].rank() != 2 || matrices[k].extent(1) != width)
      throw ShapeError("pipeline stage " + std::to_string(k + 1) +
                       ": matrix extents do not chain");
    width = matrices[k].extent(0);
  }

  const CostReport before = session.cost_report();
  TileTensor data =
      pack(v.reshape({static_cast<std::int64_t>(v.size()), 1}),
           TileTensorShape({DimSpec{static_cast<std::int64_t>(v.size()), 1, t1},
                            DimSpec{1, t2, t2}}),
           session);

  for (std::size_t k = 0; k < matrices.size(); ++k) {
    const bool odd = (k % 2) == 0;  // stage k+1
    try {
      if (odd) {
        const DenseTensor mt = transpose2d(matrices[k]);
        TileTensor tm = pack(
            mt, TileTensorShape({DimSpec{mt.extent(0), 1, t1}, DimSpec{mt.extent(1), 1, t2}}),
            session);
        data = matvec_b(tm, data);
      } else {
        const DenseTensor& mm = matrices[k];
        TileTensor tm = pack(
            mm, TileTensorShape({DimSpec{mm.extent(0), 1, t1}, DimSpec{mm.extent(1), 1, t2}}),
            session);
        data = matvec_a(tm, data);
        if (k + 1 < matrices.size()) {
          data = clean_unknowns(data);
          if (data.shape().dim(1).d < t2) data = replicate_dim(data, 2);
        }
      }
    } catch (const DepthExhaustedError& e) {
      throw DepthExhaustedError("pipeline stage " + std::to_string(k + 1) + ": " + e.what());
    }
  }
  return PipelineResult{std::move(data), session.cost_report().since(before)};
}

// Unpacks a pipeline or matvec result back to a plain vector.
inline DenseTensor unpack_vector(const TileTensor& t) {
  DenseTensor raw = unpack(t);
  return raw.reshape({static_cast<std::int64_t>(raw.size())});
}

// --- tile-extent search -------------------------------------------------------

struct TileChoice {
  std::int64_t t1 = 1;
  std::int64_t t2 = 1;
  CostReport cost;
};

// Runs the pipeline under every factorization of the slot count and reports
// each cost; no pruning.  Results are ordered by rotation count, then total
// primitive operations.
inline std::vector<TileChoice> score_tile_factorizations(std::span<const DenseTensor> matrices,
                                                         const DenseTensor& v, std::int64_t s,
                                                         std::int64_t depth) {
  std::vector<TileChoice> out;
  for (std::int64_t t1 = 1; t1 <= s; ++t1) {
    if (s % t1 != 0) continue;
    Session scratch(s, depth);
    auto res = pipeline(matrices, v, {t1, s / t1}, scratch);
    out.push_back(TileChoice{t1, s / t1, res.cost});
  }
  std::sort(out.begin(), out.end(), [](const TileChoice& a, const TileChoice& b) {
    if (a.cost.rotations != b.cost.rotations) return a.cost.rotations < b.cost.rotations;
    return a.cost.total_ops() < b.cost.total_ops();
  });
  return out;
}

}  // namespace tiletensor
