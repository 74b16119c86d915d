// Command-line surface: shape tooling, pack/unpack file round trips,
// matrix products and pipelines with cost reports, rotate-and-sum benchmarks,
// tiled network inference, the bootstrap lower bound, and plan checking.
//
// Exit codes: 0 success, 2 usage or parse error, 3 shape incompatibility,
// 4 multiplication-depth exhaustion.

#include <array>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tiletensor/backend.hpp"
#include "tiletensor/dense.hpp"
#include "tiletensor/linalg.hpp"
#include "tiletensor/nn.hpp"
#include "tiletensor/rotate_sum.hpp"
#include "tiletensor/shape.hpp"
#include "tiletensor/tile_tensor.hpp"

namespace tt = tiletensor;

namespace {

struct GlobalOptions {
  std::int64_t slots = 8192;
  std::int64_t depth = 16;
  std::uint64_t seed = 1;
  std::string sum_variant = "auto";
};

std::optional<tt::SumVariant> variant_from_name(const std::string& name) {
  if (name == "ltr") return tt::SumVariant::left_to_right;
  if (name == "rtl") return tt::SumVariant::right_to_left;
  if (name == "auto") return std::nullopt;
  throw CLI::ValidationError("--sum-variant must be one of ltr, rtl, auto");
}

tt::TileTensorShape parse_shape_arg(const std::string& text) {
  try {
    return tt::parse_shape(text);
  } catch (const tt::ShapeParseError& e) {
    std::cerr << "error: " << e.what() << "\n  " << text << "\n  "
              << std::string(std::min(e.position(), text.size()), ' ') << "^\n";
    std::exit(2);
  }
}

tt::DenseTensor read_tensor_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open tensor file " + path);
  return tt::read_tensor(in);
}

void write_tensor_file(const std::string& path, const tt::DenseTensor& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write tensor file " + path);
  tt::write_tensor(out, t);
}

std::string format_extents(std::span<const std::int64_t> e) {
  std::string out = "[";
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(e[i]);
  }
  return out + "]";
}

// --- packed tile file format -------------------------------------------------
// Header lines (shape, slots), then one `tile:` line per tile in row-major
// external order.

void write_tiles_file(const std::string& path, const tt::TileTensor& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write tile file " + path);
  out.precision(17);
  out << "shape: " << tt::format_shape(t.shape()) << "\n";
  if (t.shape().relaxed()) out << "relaxed: true\n";
  out << "slots: " << t.session().slot_count() << "\n";
  for (const auto& tile : t.tiles()) {
    out << "tile:";
    for (double v : tile.slots()) out << ' ' << v;
    out << "\n";
  }
}

tt::TileTensor read_tiles_file(const std::string& path, tt::Session& session) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open tile file " + path);
  std::string line;
  std::optional<tt::TileTensorShape> shape;
  std::int64_t slots = 0;
  std::vector<tt::Tile> tiles;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "shape:") {
      std::string text;
      ls >> text;
      shape = tt::parse_shape(text);
    } else if (tag == "relaxed:") {
      if (shape) shape = tt::TileTensorShape(shape->dims(), true);
    } else if (tag == "slots:") {
      ls >> slots;
      if (slots != session.slot_count())
        throw std::runtime_error("tile file was packed with " + std::to_string(slots) +
                                 " slots; rerun with --slots " + std::to_string(slots));
    } else if (tag == "tile:") {
      std::vector<double> values;
      double v;
      while (ls >> v) values.push_back(v);
      tiles.push_back(session.make_tile(values));
    } else {
      throw std::runtime_error("unrecognized line in tile file: " + line);
    }
  }
  if (!shape) throw std::runtime_error("tile file has no shape line");
  return tt::TileTensor(*shape, std::move(tiles), session);
}

std::array<std::int64_t, 3> parse_tile3(const std::vector<std::int64_t>& tile) {
  if (tile.size() != 3) throw CLI::ValidationError("--tile expects t1,t2,t3");
  return {tile[0], tile[1], tile[2]};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tile tensor toolkit: SIMD packing, shape algebra, and cost model"};
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--slots", g.slots, "slot count per tile")->capture_default_str();
  app.add_option("--depth", g.depth, "multiplication depth (max chain index)")
      ->capture_default_str();
  app.add_option("--seed", g.seed, "seed for generated data and weights")
      ->capture_default_str();
  app.add_option("--sum-variant", g.sum_variant, "rotate-and-sum schedule: ltr, rtl, auto")
      ->capture_default_str();

  // --- shape ---------------------------------------------------------------
  auto* cmd_shape = app.add_subcommand("shape", "inspect a shape; derive op results");
  std::string shape_text, partner_text, op_name = "add";
  int sum_dim = 0;
  cmd_shape->add_option("shape", shape_text, "tile tensor shape, e.g. \"[4,3/8,5/16]\"")
      ->required();
  cmd_shape->add_option("partner", partner_text, "second shape for an elementwise op");
  cmd_shape->add_option("--op", op_name, "elementwise op with the partner: add or mul");
  cmd_shape->add_option("--sum", sum_dim, "print the shape after summing this dimension");
  cmd_shape->callback([&] {
    const tt::TileTensorShape shape = parse_shape_arg(shape_text);
    std::cout << "canonical=" << tt::format_shape(shape) << "\n";
    std::cout << "external=" << format_extents(shape.external_extents()) << "\n";
    std::cout << "tiles=" << shape.tile_count() << "\n";
    std::cout << "slots_used=" << shape.used_slots() << "\n";
    std::cout << "slots_total=" << shape.total_slots() << "\n";
    if (sum_dim > 0)
      std::cout << "sum_result=" << tt::format_shape(tt::sum_result_shape(shape, sum_dim))
                << "\n";
    if (!partner_text.empty()) {
      const tt::TileTensorShape partner = parse_shape_arg(partner_text);
      const tt::OpKind kind = op_name == "mul" ? tt::OpKind::mul : tt::OpKind::add;
      std::cout << op_name
                << "_result=" << tt::format_shape(tt::elementwise_result_shape(shape, partner, kind))
                << "\n";
    }
  });

  // --- pack / unpack ---------------------------------------------------------
  auto* cmd_pack = app.add_subcommand("pack", "pack a dense tensor file into tiles");
  std::string pack_in, pack_shape, pack_out;
  bool pack_relaxed = false;
  cmd_pack->add_option("tensor", pack_in, "input tensor file")->required();
  cmd_pack->add_option("shape", pack_shape, "target tile tensor shape")->required();
  cmd_pack->add_option("-o,--out", pack_out, "output tile file")->required();
  cmd_pack->add_flag("--relaxed", pack_relaxed, "allow the tile slot product below --slots");
  cmd_pack->callback([&] {
    tt::Session session(g.slots, g.depth);
    tt::TileTensorShape shape = parse_shape_arg(pack_shape);
    if (pack_relaxed) shape = tt::TileTensorShape(shape.dims(), true);
    const tt::TileTensor packed = tt::pack(read_tensor_file(pack_in), shape, session);
    write_tiles_file(pack_out, packed);
    std::cout << "tiles=" << packed.tile_count() << "\n";
  });

  auto* cmd_unpack = app.add_subcommand("unpack", "unpack a tile file to a dense tensor");
  std::string unpack_in, unpack_out;
  cmd_unpack->add_option("tiles", unpack_in, "input tile file")->required();
  cmd_unpack->add_option("-o,--out", unpack_out, "output tensor file")->required();
  cmd_unpack->callback([&] {
    tt::Session session(g.slots, g.depth);
    const tt::TileTensor packed = read_tiles_file(unpack_in, session);
    write_tensor_file(unpack_out, tt::unpack(packed));
    std::cout << "shape=" << tt::format_shape(packed.shape()) << "\n";
  });

  // --- matmul ------------------------------------------------------------------
  auto* cmd_matmul = app.add_subcommand("matmul", "one tiled product, with cost report");
  std::string mm_a, mm_b, mm_out;
  std::vector<std::int64_t> mm_tile;
  bool mm_oracle = false;
  cmd_matmul->add_option("lhs", mm_a, "matrix tensor file")->required();
  cmd_matmul->add_option("rhs", mm_b, "vector or matrix tensor file")->required();
  cmd_matmul->add_option("--tile", mm_tile, "tile extents t1,t2 (matvec) or t1,t2,t3 (matmul)")
      ->required()
      ->delimiter(',');
  cmd_matmul->add_option("-o,--out", mm_out, "write the unpacked result here");
  cmd_matmul->add_flag("--oracle", mm_oracle, "also run the dense path and compare");
  cmd_matmul->callback([&] {
    const auto variant = variant_from_name(g.sum_variant);
    tt::Session session(g.slots, g.depth);
    const tt::DenseTensor a = read_tensor_file(mm_a);
    const tt::DenseTensor b = read_tensor_file(mm_b);
    tt::DenseTensor result = tt::DenseTensor::zeros({1});
    if (mm_tile.size() == 2) {
      const auto [t1, t2] = std::pair{mm_tile[0], mm_tile[1]};
      const tt::TileTensor tm = tt::pack(
          a, tt::TileTensorShape({tt::DimSpec{a.extent(0), 1, t1}, tt::DimSpec{a.extent(1), 1, t2}}),
          session);
      const tt::TileTensor tv = tt::pack(
          b.reshape({1, static_cast<std::int64_t>(b.size())}),
          tt::TileTensorShape({tt::DimSpec{1, t1, t1}, tt::DimSpec{static_cast<std::int64_t>(b.size()), 1, t2}}),
          session);
      result = tt::unpack_vector(tt::matvec_a(tm, tv, variant));
    } else if (mm_tile.size() == 3) {
      const auto [t1, t2, t3] = std::tuple{mm_tile[0], mm_tile[1], mm_tile[2]};
      const auto ax = a.extent(0), bx = a.extent(1), cx = b.extent(1);
      const tt::TileTensor tm1 = tt::pack(
          a.reshape({ax, bx, 1}),
          tt::TileTensorShape({tt::DimSpec{ax, 1, t1}, tt::DimSpec{bx, 1, t2}, tt::DimSpec{1, t3, t3}}),
          session);
      const tt::TileTensor tm2 = tt::pack(
          b.reshape({1, bx, cx}),
          tt::TileTensorShape({tt::DimSpec{1, t1, t1}, tt::DimSpec{bx, 1, t2}, tt::DimSpec{cx, 1, t3}}),
          session);
      result = tt::unpack(tt::matmul_a(tm1, tm2, variant)).reshape({ax, cx});
    } else {
      throw CLI::ValidationError("--tile expects two or three extents");
    }
    std::cout << session.cost_report().to_text();
    if (mm_oracle) {
      const tt::DenseTensor expect =
          b.rank() == 1 ? tt::dense_matmul(a, b.reshape({a.extent(1), 1}))
                              .reshape({a.extent(0)})
                        : tt::dense_matmul(a, b);
      std::cout << "max_rel_deviation=" << tt::max_rel_diff(result, expect) << "\n";
    }
    if (!mm_out.empty()) write_tensor_file(mm_out, result);
  });

  // --- pipeline -------------------------------------------------------------------
  auto* cmd_pipeline =
      app.add_subcommand("pipeline", "alternating matrix-vector chain M_k(...(M_1 V))");
  std::vector<std::string> pipe_files;
  std::vector<std::int64_t> pipe_tile;
  std::string pipe_out;
  bool pipe_oracle = false, pipe_search = false;
  cmd_pipeline->add_option("files", pipe_files, "matrix files M1..Mk, then the vector file")
      ->required()
      ->expected(-2);
  cmd_pipeline->add_option("--tile", pipe_tile, "tile extents t1,t2")->delimiter(',');
  cmd_pipeline->add_option("-o,--out", pipe_out, "write the unpacked result here");
  cmd_pipeline->add_flag("--oracle", pipe_oracle, "also run the dense path and compare");
  cmd_pipeline->add_flag("--search", pipe_search, "score every tile factorization instead");
  cmd_pipeline->callback([&] {
    std::vector<tt::DenseTensor> matrices;
    for (std::size_t i = 0; i + 1 < pipe_files.size(); ++i)
      matrices.push_back(read_tensor_file(pipe_files[i]));
    const tt::DenseTensor v = read_tensor_file(pipe_files.back());
    if (pipe_search) {
      for (const auto& choice : tt::score_tile_factorizations(matrices, v, g.slots, g.depth))
        std::cout << "tile=" << choice.t1 << "," << choice.t2
                  << " rotations=" << choice.cost.rotations
                  << " additions=" << choice.cost.additions
                  << " multiplications=" << choice.cost.multiplications << "\n";
      return;
    }
    if (pipe_tile.size() != 2) throw CLI::ValidationError("--tile expects t1,t2");
    tt::Session session(g.slots, g.depth);
    auto res = tt::pipeline(matrices, v, {pipe_tile[0], pipe_tile[1]}, session);
    std::cout << res.cost.to_text();
    const tt::DenseTensor out = tt::unpack_vector(res.out);
    if (pipe_oracle) {
      tt::DenseTensor expect = v.reshape({static_cast<std::int64_t>(v.size()), 1});
      for (const auto& m : matrices) expect = tt::dense_matmul(m, expect);
      std::cout << "max_rel_deviation="
                << tt::max_rel_diff(out, expect.reshape({expect.extent(0)})) << "\n";
    }
    if (!pipe_out.empty()) write_tensor_file(pipe_out, out);
  });

  // --- bench-sum ---------------------------------------------------------------
  auto* cmd_bench = app.add_subcommand("bench-sum", "rotate-and-sum rotation counts");
  std::int64_t bench_n = 0;
  std::string bench_variant;
  cmd_bench->add_option("--n", bench_n, "number of leading elements to sum")->required();
  cmd_bench->add_option("--variant", bench_variant,
                        "ltr, rtl, or both (default: both, or the global --sum-variant)");
  cmd_bench->callback([&] {
    if (bench_variant.empty())
      bench_variant = g.sum_variant == "auto" ? "both" : g.sum_variant;
    std::mt19937_64 rng(g.seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> values(static_cast<std::size_t>(g.slots), 0.0);
    for (std::int64_t i = 0; i < bench_n && i < g.slots; ++i)
      values[static_cast<std::size_t>(i)] = dist(rng);
    double direct = 0;
    for (std::int64_t i = 0; i < bench_n; ++i) direct += values[static_cast<std::size_t>(i)];

    auto run = [&](const char* name, tt::SumVariant variant) {
      tt::Session session(g.slots, g.depth);
      const tt::Tile tile = session.make_tile(values);
      const auto t0 = std::chrono::steady_clock::now();
      const tt::Tile summed = tt::sum_tile_flat(session, tile, bench_n, variant);
      const auto t1 = std::chrono::steady_clock::now();
      const auto report = session.cost_report();
      const bool ok = std::abs(summed.slots()[0] - direct) <=
                      1e-9 * std::max(1.0, std::abs(direct));
      std::cout << "variant=" << name << " rotations=" << report.rotations
                << " additions=" << report.additions << " verified=" << (ok ? "true" : "false")
                << "\n";
      std::cerr << "# " << name << " wall_ms="
                << std::chrono::duration<double, std::milli>(t1 - t0).count() << "\n";
    };
    if (bench_variant == "ltr" || bench_variant == "both")
      run("ltr", tt::SumVariant::left_to_right);
    if (bench_variant == "rtl" || bench_variant == "both")
      run("rtl", tt::SumVariant::right_to_left);
    if (bench_variant != "ltr" && bench_variant != "rtl" && bench_variant != "both")
      throw CLI::ValidationError("--variant must be ltr, rtl, or both");
  });

  // --- infer ---------------------------------------------------------------------
  auto* cmd_infer = app.add_subcommand("infer", "tiled network inference with cost report");
  std::string infer_net, infer_batch, infer_out;
  std::vector<std::int64_t> infer_tile;
  std::int64_t infer_random = 0;
  bool infer_oracle = false;
  cmd_infer->add_option("network", infer_net, "network spec file")->required();
  cmd_infer->add_option("--tile", infer_tile, "tile extents t1,t2,t3")->required()->delimiter(',');
  cmd_infer->add_option("--batch", infer_batch, "batch tensor file [features, samples]");
  cmd_infer->add_option("--random", infer_random, "generate this many random samples instead");
  cmd_infer->add_option("-o,--out", infer_out, "write the logits tensor here");
  cmd_infer->add_flag("--oracle", infer_oracle, "also run the dense forward pass and compare");
  cmd_infer->callback([&] {
    std::ifstream netfile(infer_net);
    if (!netfile) throw std::runtime_error("cannot open network file " + infer_net);
    const std::string base_dir = infer_net.find('/') != std::string::npos
                                     ? infer_net.substr(0, infer_net.rfind('/'))
                                     : std::string();
    const tt::NetworkSpec net = tt::parse_network(netfile, base_dir, g.seed);
    tt::DenseTensor batch = tt::DenseTensor::zeros({1});
    if (!infer_batch.empty()) {
      batch = read_tensor_file(infer_batch);
    } else if (infer_random > 0) {
      std::mt19937_64 rng(g.seed + 1);
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      batch = tt::DenseTensor::zeros({net.input_size(), infer_random});
      for (auto& x : batch.values()) x = dist(rng);
    } else {
      throw CLI::ValidationError("provide --batch FILE or --random N");
    }
    tt::Session session(g.slots, g.depth);
    const auto res = tt::cryptonets_infer(net, batch, parse_tile3(infer_tile), session);
    std::cout << res.cost.to_text();
    if (infer_oracle)
      std::cout << "max_rel_deviation=" << tt::max_rel_diff(res.logits, tt::nn_forward(net, batch))
                << "\n";
    if (!infer_out.empty()) write_tensor_file(infer_out, res.logits);
  });

  // --- bootstrap-bound --------------------------------------------------------------
  auto* cmd_bound =
      app.add_subcommand("bootstrap-bound", "analytic bootstrap lower bound per iteration");
  std::vector<std::string> bound_filters;
  cmd_bound->add_option("--filter", bound_filters,
                        "filter group as COUNTxKHxKW:OUTROWS, e.g. 32x3x50:18")
      ->required();
  cmd_bound->callback([&] {
    std::vector<tt::FilterGroup> groups;
    for (const auto& text : bound_filters) {
      tt::FilterGroup fg;
      char x1, x2, colon;
      std::istringstream ls(text);
      if (!(ls >> fg.count >> x1 >> fg.filter_h >> x2 >> fg.filter_w >> colon >> fg.out_rows) ||
          x1 != 'x' || x2 != 'x' || colon != ':')
        throw CLI::ValidationError("--filter expects COUNTxKHxKW:OUTROWS, got " + text);
      groups.push_back(fg);
    }
    std::cout << "bootstrap_lower_bound=" << tt::bootstrap_lower_bound(groups, g.depth) << "\n";
  });

  // --- validate-plan -----------------------------------------------------------------
  auto* cmd_plan = app.add_subcommand("validate-plan", "check a shape/chain plan file");
  std::string plan_file;
  cmd_plan->add_option("plan", plan_file, "plan file")->required();
  cmd_plan->callback([&] {
    std::ifstream in(plan_file);
    if (!in) throw std::runtime_error("cannot open plan file " + plan_file);
    const auto steps = tt::parse_plan(in);
    const auto report =
        tt::validate_plan(steps, tt::BackendConfig{g.slots, g.depth});
    std::cout << report.to_text();
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const tt::ShapeParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const tt::DepthExhaustedError& e) {
    std::cerr << "error: depth exhausted: " << e.what() << "\n";
    return 4;
  } catch (const tt::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
