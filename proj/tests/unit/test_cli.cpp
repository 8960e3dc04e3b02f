#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "ion_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = ion::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path dir = fs::temp_directory_path() / "ion_cli_test";
  fs::create_directories(dir);
  std::ofstream(dir / name, std::ios::binary) << text;
  return dir / name;
}

const char* kTiny = R"({
  "task": "classification",
  "dataset": {"image_size": 16, "n_train": 8, "n_val": 4, "n_test": 4},
  "domains": [{"name": "clean"}, {"name": "noise", "degrade": {"kind": "noise"}}],
  "ion": {"n_blocks": 2, "base_channels": 4},
  "target": {"kind": "classifier", "width": 4, "depth": 1, "num_classes": 6},
  "stages": {"pretrain": {"max_epochs": 1}},
  "replicates": 1
})";

}  // namespace

TEST_CASE("cli: usage and config errors exit with code 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"train"}).code == 2);
  CHECK(run({"--help"}).code == 0);

  const auto missing = write_config("missing.json", R"({"domains": [{"name": "clean"}]})");
  const auto r = run({"train", "--config", missing.string(), "--quiet"});
  CHECK(r.code == 2);
  CHECK(r.err.find("task") != std::string::npos);

  const auto broken = write_config("broken.json", "{\n  \"task\": \"classification\",\n  oops\n}");
  const auto b = run({"train", "--config", broken.string()});
  CHECK(b.code == 2);
  CHECK(b.err.find("line 3") != std::string::npos);

  const auto tiny = write_config("tiny.json", kTiny);
  CHECK(run({"train", "--config", tiny.string(), "--scheme", "nope", "--quiet"}).code == 2);
  CHECK(run({"matrix", "--config", tiny.string(), "--threads", "0"}).code == 2);
  CHECK(run({"degrade", "--spec", R"({"kind": "blur"})", "/nonexistent.ppm"}).code == 2);
  CHECK(run({"report", "/nonexistent/run"}).code == 2);
}

TEST_CASE("cli: runtime failures exit with code 3") {
  const auto tiny = write_config("tiny.json", kTiny);
  const auto r = run({"eval", "--config", tiny.string(), "--checkpoint", "/nonexistent.ckpt"});
  CHECK(r.code == 3);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("cli: train writes a record and a checkpoint; reruns are byte-identical") {
  const auto tiny = write_config("tiny.json", kTiny);
  const fs::path out = fs::temp_directory_path() / "ion_cli_test" / "train";
  fs::remove_all(out);
  const auto a = run({"train", "--config", tiny.string(), "--out", out.string(), "--seed", "3", "--quiet"});
  REQUIRE(a.code == 0);
  CHECK(fs::exists(out / "rep0/pretrain.F.ckpt"));
  CHECK(fs::exists(out / "rep0/pretrain.manifest.json"));
  const auto b = run({"train", "--config", tiny.string(), "--out", out.string(), "--seed", "3", "--quiet"});
  CHECK(a.out == b.out);
  const auto c = run({"train", "--config", tiny.string(), "--out", out.string(), "--seed", "4", "--quiet"});
  CHECK(a.out != c.out);

  const auto e = run({"eval", "--config", tiny.string(), "--checkpoint",
                      (out / "rep0/pretrain.F.ckpt").string(), "--out", (out / "eval").string()});
  CHECK(e.code == 0);
  CHECK(e.out.rfind("technique,domain,replicate", 0) == 0);
}

TEST_CASE("cli: gradcheck exit status follows the suite") {
  CHECK(run({"gradcheck"}).code == 0);
  const auto bad = run({"gradcheck", "--corrupt", "linear"});
  CHECK(bad.code == 1);
  CHECK(bad.out.find("FAIL") != std::string::npos);
}
