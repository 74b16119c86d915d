#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "tiletensor/dense.hpp"

using tiletensor::DenseTensor;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
};

const char* cli_binary() {
  const char* bin = std::getenv("TILETENSOR_CLI");
  REQUIRE(bin != nullptr);
  return bin;
}

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(cli_binary()) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult res;
  char buf[4096];
  while (std::size_t got = std::fread(buf, 1, sizeof buf, pipe)) res.out.append(buf, got);
  const int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::filesystem::path scratch_dir() {
  static const std::filesystem::path dir = [] {
    auto d = std::filesystem::temp_directory_path() /
             ("tiletensor_cli_" + std::to_string(::getpid()));
    std::filesystem::create_directories(d);
    return d;
  }();
  return dir;
}

std::string write_file(const std::string& name, const std::string& content) {
  const auto path = scratch_dir() / name;
  std::ofstream out(path);
  out << content;
  return path.string();
}

std::string write_tensor_file(const std::string& name, const DenseTensor& t) {
  const auto path = scratch_dir() / name;
  std::ofstream out(path);
  tiletensor::write_tensor(out, t);
  return path.string();
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("shape subcommand") {
  const auto res = run_cli("shape \"[5/2,6/4]\"");
  CHECK(res.exit_code == 0);
  CHECK(contains(res.out, "canonical=[5/2,6/4]"));
  CHECK(contains(res.out, "external=[3,2]"));
  CHECK(contains(res.out, "slots_used=30"));
  CHECK(contains(res.out, "slots_total=48"));

  const auto sum = run_cli("shape \"[4,3/8,5/16]\" --sum 2");
  CHECK(sum.exit_code == 0);
  CHECK(contains(sum.out, "sum_result=[4,*/8,5/16]"));

  const auto add = run_cli("shape \"[18/8,4/16]\" \"[*/8,4/16]\" --op add");
  CHECK(add.exit_code == 0);
  CHECK(contains(add.out, "add_result=[18?/8,4/16]"));

  // incompatibility names the rule and exits 3
  const auto bad = run_cli("shape \"[5/8]\" \"[6/8]\" --op add");
  CHECK(bad.exit_code == 3);

  // malformed text exits 2
  const auto malformed = run_cli("shape \"[5/2,*3/\"");
  CHECK(malformed.exit_code == 2);

  const auto usage = run_cli("shape");
  CHECK(usage.exit_code == 2);
}

TEST_CASE("pack and unpack round trip") {
  std::mt19937_64 rng(401);
  std::uniform_real_distribution<double> dist(-3, 3);
  DenseTensor m = DenseTensor::zeros({5, 6});
  for (auto& x : m.values()) x = dist(rng);
  const std::string in = write_tensor_file("m.tensor", m);
  const auto dir = scratch_dir();

  const auto packed = run_cli("--slots 8 pack " + in + " \"[5/2,6/4]\" -o " +
                              (dir / "m.tiles").string());
  CHECK(packed.exit_code == 0);
  CHECK(contains(packed.out, "tiles=6"));

  const auto unpacked = run_cli("--slots 8 unpack " + (dir / "m.tiles").string() + " -o " +
                                (dir / "m_back.tensor").string());
  CHECK(unpacked.exit_code == 0);

  std::ifstream back_file(dir / "m_back.tensor");
  const DenseTensor back = tiletensor::read_tensor(back_file);
  CHECK(back == m);

  // a comment-only tensor file is an error
  const std::string empty = write_file("empty.tensor", "# nothing\n");
  const auto bad = run_cli("--slots 8 pack " + empty + " \"[5/2,6/4]\" -o " +
                           (dir / "x.tiles").string());
  CHECK(bad.exit_code == 2);

  // shape/slot mismatch is a shape error
  const auto mismatch = run_cli("--slots 16 pack " + in + " \"[5/2,6/4]\" -o " +
                                (dir / "y.tiles").string());
  CHECK(mismatch.exit_code == 3);
}

TEST_CASE("pack/unpack fuzz round trips") {
  std::mt19937_64 rng(411);
  std::uniform_real_distribution<double> dist(-5, 5);
  const auto dir = scratch_dir();
  const std::vector<std::pair<std::string, std::vector<std::int64_t>>> cases{
      {"[7/4,3/4]", {7, 3}},     {"[12/2,*/8]", {12, 1}},   {"[3,5/16]", {3, 5}},
      {"[2/2,2/2,4/4]", {2, 2, 4}}, {"[*/16]", {1}},        {"[9/8,1/2]", {9, 1}},
  };
  int idx = 0;
  for (const auto& [shape, extents] : cases) {
    std::int64_t count = 1;
    for (auto e : extents) count *= e;
    std::vector<double> values(static_cast<std::size_t>(count));
    for (auto& x : values) x = dist(rng);
    const DenseTensor t(extents, values);
    const std::string name = "fuzz" + std::to_string(idx++);
    const std::string in = write_tensor_file(name + ".tensor", t);
    const std::string tiles = (dir / (name + ".tiles")).string();
    const std::string back = (dir / (name + "_back.tensor")).string();
    REQUIRE(run_cli("--slots 16 pack " + in + " \"" + shape + "\" -o " + tiles).exit_code == 0);
    REQUIRE(run_cli("--slots 16 unpack " + tiles + " -o " + back).exit_code == 0);
    std::ifstream back_file(back);
    CHECK(tiletensor::read_tensor(back_file) == t);
  }
}

TEST_CASE("infer with a pure batch tile reports zero rotations") {
  const std::string net = write_file("bnet.txt",
                                     "input h=4 w=4\n"
                                     "conv filters=2 kh=2 kw=2 stride=2 pad=0\n"
                                     "act square\n"
                                     "fc in=8 out=3\n");
  const auto res = run_cli("--slots 64 --depth 8 infer " + net +
                           " --tile 1,1,64 --random 64 --oracle");
  CHECK(res.exit_code == 0);
  CHECK(contains(res.out, "rotations=0"));
  const auto pos = res.out.find("max_rel_deviation=");
  REQUIRE(pos != std::string::npos);
  CHECK(std::stod(res.out.substr(pos + 18)) < 1e-6);
}

TEST_CASE("bench-sum reports the rotation counts") {
  const auto res = run_cli("--slots 4096 bench-sum --n 1190");
  CHECK(res.exit_code == 0);
  CHECK(contains(res.out, "variant=ltr rotations=14 additions=14 verified=true"));
  CHECK(contains(res.out, "variant=rtl rotations=14 additions=14 verified=true"));

  const auto pow2 = run_cli("--slots 4096 bench-sum --n 2048");
  CHECK(contains(pow2.out, "variant=ltr rotations=11"));
  CHECK(contains(pow2.out, "variant=rtl rotations=11"));

  const auto one = run_cli("--slots 4096 bench-sum --n 1");
  CHECK(contains(one.out, "variant=rtl rotations=0"));
}

TEST_CASE("reports are byte-identical across identical invocations") {
  const std::string args = "--slots 4096 --seed 7 bench-sum --n 1190";
  CHECK(run_cli(args).out == run_cli(args).out);
}

TEST_CASE("the thread-count hint never changes a report") {
  const std::string net = write_file("tnet.txt",
                                     "input h=4 w=4\n"
                                     "conv filters=2 kh=2 kw=2 stride=2 pad=0\n"
                                     "act square\n"
                                     "fc in=8 out=3\n");
  const std::string args = "--slots 32 --depth 8 --seed 9 infer " + net + " --tile 2,4,4 --random 4";
  const std::string base = run_cli(args).out;
  REQUIRE(!base.empty());
  const std::string cmd = "env TILETENSOR_THREADS=4 " + std::string(cli_binary()) + " " + args +
                          " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string threaded;
  char buf[4096];
  while (std::size_t got = std::fread(buf, 1, sizeof buf, pipe)) threaded.append(buf, got);
  pclose(pipe);
  CHECK(threaded == base);
}

TEST_CASE("relaxed packing round trips through the CLI") {
  std::mt19937_64 rng(409);
  std::uniform_real_distribution<double> dist(-2, 2);
  DenseTensor m = DenseTensor::zeros({7, 5});
  for (auto& x : m.values()) x = dist(rng);
  const std::string in = write_tensor_file("relaxed.tensor", m);
  const auto dir = scratch_dir();
  // 3x5 = 15 tile slots inside 16-slot tiles
  const auto packed = run_cli("--slots 16 pack " + in + " \"[7/3,5/5]\" --relaxed -o " +
                              (dir / "relaxed.tiles").string());
  CHECK(packed.exit_code == 0);
  const auto unpacked = run_cli("--slots 16 unpack " + (dir / "relaxed.tiles").string() +
                                " -o " + (dir / "relaxed_back.tensor").string());
  CHECK(unpacked.exit_code == 0);
  std::ifstream back_file(dir / "relaxed_back.tensor");
  CHECK(tiletensor::read_tensor(back_file) == m);
}

TEST_CASE("matmul with oracle check") {
  std::mt19937_64 rng(403);
  std::uniform_real_distribution<double> dist(-2, 2);
  DenseTensor m = DenseTensor::zeros({5, 6});
  for (auto& x : m.values()) x = dist(rng);
  DenseTensor v = DenseTensor::zeros({6});
  for (auto& x : v.values()) x = dist(rng);
  const std::string mf = write_tensor_file("mm.tensor", m);
  const std::string vf = write_tensor_file("mv.tensor", v);
  const auto res = run_cli("--slots 8 matmul " + mf + " " + vf + " --tile 2,4 --oracle");
  CHECK(res.exit_code == 0);
  CHECK(contains(res.out, "multiplications="));
  CHECK(contains(res.out, "max_rel_deviation="));
  // the deviation line must carry a tiny number
  const auto pos = res.out.find("max_rel_deviation=");
  const double dev = std::stod(res.out.substr(pos + 18));
  CHECK(dev < 1e-9);
}

TEST_CASE("pipeline with oracle and search") {
  std::mt19937_64 rng(407);
  std::uniform_real_distribution<double> dist(-1, 1);
  DenseTensor m1 = DenseTensor::zeros({5, 7});
  DenseTensor m2 = DenseTensor::zeros({4, 5});
  DenseTensor v = DenseTensor::zeros({7});
  for (auto* t : {&m1, &m2, &v})
    for (auto& x : t->values()) x = dist(rng);
  const std::string f1 = write_tensor_file("p1.tensor", m1);
  const std::string f2 = write_tensor_file("p2.tensor", m2);
  const std::string fv = write_tensor_file("pv.tensor", v);

  const auto res =
      run_cli("--slots 16 pipeline " + f1 + " " + f2 + " " + fv + " --tile 4,4 --oracle");
  CHECK(res.exit_code == 0);
  const auto pos = res.out.find("max_rel_deviation=");
  REQUIRE(pos != std::string::npos);
  CHECK(std::stod(res.out.substr(pos + 18)) < 1e-9);

  const auto search = run_cli("--slots 16 pipeline " + f1 + " " + f2 + " " + fv + " --search");
  CHECK(search.exit_code == 0);
  CHECK(contains(search.out, "tile=1,16"));
  CHECK(contains(search.out, "tile=16,1"));
}

TEST_CASE("infer runs a network file with cost report and oracle") {
  const std::string net = write_file("net.txt",
                                     "input h=6 w=6\n"
                                     "conv filters=2 kh=3 kw=3 stride=2 pad=1\n"
                                     "act square\n"
                                     "fc in=18 out=4\n"
                                     "act square\n"
                                     "fc in=4 out=3\n");
  const auto res = run_cli("--slots 64 --depth 8 --seed 5 infer " + net +
                           " --tile 2,4,8 --random 8 --oracle");
  CHECK(res.exit_code == 0);
  CHECK(contains(res.out, "multiplications="));
  const auto pos = res.out.find("max_rel_deviation=");
  REQUIRE(pos != std::string::npos);
  CHECK(std::stod(res.out.substr(pos + 18)) < 1e-6);

  // depth exhaustion maps to exit code 4
  const auto shallow = run_cli("--slots 64 --depth 2 infer " + net + " --tile 2,4,8 --random 2");
  CHECK(shallow.exit_code == 4);
}

TEST_CASE("infer reproduces the pinned counts for tile [32,256,1]") {
  const char* data = std::getenv("TILETENSOR_TEST_DATA");
  REQUIRE(data != nullptr);
  const std::string net = (std::filesystem::path(data) / "cryptonets.txt").string();
  const auto res =
      run_cli("--slots 8192 --depth 8 infer " + net + " --tile 32,256,1 --random 1 --oracle");
  CHECK(res.exit_code == 0);
  CHECK(contains(res.out, "multiplications=32"));
  CHECK(contains(res.out, "rotations=89"));
  CHECK(contains(res.out, "additions=113"));
  CHECK(contains(res.out, "bootstraps=0"));
  const auto pos = res.out.find("max_rel_deviation=");
  REQUIRE(pos != std::string::npos);
  CHECK(std::stod(res.out.substr(pos + 18)) < 1e-6);
}

TEST_CASE("bootstrap-bound prints the analytic bound") {
  const auto d3 = run_cli("--depth 3 bootstrap-bound --filter 32x3x50:18 --filter 32x5x50:16");
  CHECK(d3.exit_code == 0);
  CHECK(contains(d3.out, "bootstrap_lower_bound=1088"));
  const auto d4 = run_cli("--depth 4 bootstrap-bound --filter 32x3x50:18 --filter 32x5x50:16");
  CHECK(contains(d4.out, "bootstrap_lower_bound=816"));
  const auto single = run_cli("--depth 3 bootstrap-bound --filter 1x3x50:18");
  CHECK(contains(single.out, "bootstrap_lower_bound=18"));
}

TEST_CASE("validate-plan") {
  const char* data = std::getenv("TILETENSOR_TEST_DATA");
  REQUIRE(data != nullptr);
  const auto res =
      run_cli("--depth 4 validate-plan " + (std::filesystem::path(data) / "cnn_train_plan.txt").string());
  CHECK(res.exit_code == 0);
  CHECK(contains(res.out, "ok=true"));
  CHECK(contains(res.out, "bootstraps=2"));

  const std::string bad = write_file("bad_plan.txt",
                                     "step m1 op=mul in=[4/4] in=[4/4] out=[4/4] chain=1:0\n"
                                     "step m2 op=mul in=[4/4] in=[4/4] out=[4/4] chain=0:-1\n");
  const auto violated = run_cli("--depth 1 validate-plan " + bad);
  CHECK(violated.exit_code == 0);
  CHECK(contains(violated.out, "ok=false"));
  CHECK(contains(violated.out, "violation"));

  const auto missing = run_cli("validate-plan /nonexistent/plan.txt");
  CHECK(missing.exit_code == 2);
}

TEST_CASE("unknown subcommands and bad flags exit 2") {
  CHECK(run_cli("frobnicate").exit_code == 2);
  CHECK(run_cli("bench-sum").exit_code == 2);  // missing --n
}
