#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "mgrade/jsonutil.hpp"
#include "mgrade/model.hpp"
#include "mgrade/serialize.hpp"

using namespace mgrade;
namespace fs = std::filesystem;

namespace {

const char* kCli = MGRADE_CLI_PATH;

struct Run {
  int code = -1;
  std::string output;
};

Run run_cli(const std::string& args) {
  const fs::path log = fs::path("cli_scratch") / "last_output.txt";
  fs::create_directories("cli_scratch");
  const std::string cmd = std::string(kCli) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = status == -1 ? -1 : WEXITSTATUS(status);
  std::ifstream is(log);
  std::stringstream ss;
  ss << is.rdbuf();
  r.output = ss.str();
  return r;
}

std::string scratch(const std::string& name) { return (fs::path("cli_scratch") / name).string(); }

void write_train_config(const std::string& path) {
  write_text_file(path, R"({
  "model": {
    "layers": 1, "hidden": 8, "input": 5, "output": 5,
    "conv": {"variant": "l", "taps": 2, "max_delay": 2, "position_init": "uniform"},
    "head": "regress_per_step", "use_mlp": false, "use_norm": false
  },
  "train": {"epochs": 2, "batch_size": 16, "base_lr": 0.01, "warmup_frac": 0.0, "seed": 5}
})");
}

struct ScratchCleaner {
  ScratchCleaner() { fs::remove_all("cli_scratch"); }
} cleaner;

}  // namespace

TEST_CASE("repeated generation produces identical file digests") {
  REQUIRE(run_cli("gen flipflop --out " + scratch("ff_a") + " --n 40 --length 64 --seed 7").code == 0);
  REQUIRE(run_cli("gen flipflop --out " + scratch("ff_b") + " --n 40 --length 64 --seed 7").code == 0);
  for (const char* name : {"train.inputs.mgt", "train.targets.mgt", "dataset.json"}) {
    CHECK(file_digest(scratch("ff_a") + "/" + name) == file_digest(scratch("ff_b") + "/" + name));
  }
}

TEST_CASE("zero dt fails the lorenz precondition with a usage exit") {
  const Run r = run_cli("gen lorenz --out " + scratch("lz_bad") + " --n 2 --dt 0");
  CHECK(r.code == 1);
  CHECK(r.output.find("dt") != std::string::npos);
}

TEST_CASE("sparse generation records the OOD regime in the sidecar") {
  REQUIRE(run_cli("gen flipflop --out " + scratch("ff_sparse") +
                  " --n 20 --length 64 --seed 9 --p-ignore 0.98")
              .code == 0);
  const nlohmann::json sidecar = load_json_file(scratch("ff_sparse") + "/dataset.json");
  CHECK(sidecar.at("meta").at("regime") == "ood_sparse");
  CHECK(sidecar.at("meta").at("p_ignore") == 0.98);
}

TEST_CASE("training produces metrics, checkpoints and one manifest; reruns are byte-identical") {
  write_train_config(scratch("cfg.json"));
  REQUIRE(run_cli("gen flipflop --out " + scratch("ff_train") + " --n 64 --length 64 --seed 3")
              .code == 0);
  REQUIRE(run_cli("train --config " + scratch("cfg.json") + " --data " + scratch("ff_train") +
                  " --out " + scratch("run1"))
              .code == 0);
  CHECK(fs::exists(scratch("run1") + "/metrics.csv"));
  CHECK(fs::exists(scratch("run1") + "/best.ckpt"));
  CHECK(fs::exists(scratch("run1") + "/last.ckpt"));
  CHECK(fs::exists(scratch("run1") + "/manifest.json"));

  REQUIRE(run_cli("train --config " + scratch("cfg.json") + " --data " + scratch("ff_train") +
                  " --out " + scratch("run2"))
              .code == 0);
  CHECK(file_digest(scratch("run1") + "/metrics.csv") ==
        file_digest(scratch("run2") + "/metrics.csv"));
}

TEST_CASE("resuming continues the epoch numbering") {
  const Run r = run_cli("train --config " + scratch("cfg.json") + " --data " + scratch("ff_train") +
                        " --out " + scratch("run_resume") + " --resume " + scratch("run1") +
                        "/last.ckpt --epochs 4");
  REQUIRE(r.code == 0);
  std::ifstream is(scratch("run_resume") + "/metrics.csv");
  std::string header, first_row;
  std::getline(is, header);
  std::getline(is, first_row);
  CHECK(first_row.rfind("2,", 0) == 0);  // prior run ended after epoch 1
}

TEST_CASE("a missing data path fails before any output is written") {
  const Run r = run_cli("train --config " + scratch("cfg.json") + " --data " +
                        scratch("does_not_exist") + " --out " + scratch("run_missing"));
  CHECK(r.code == 2);
  CHECK_FALSE(fs::exists(scratch("run_missing") + "/metrics.csv"));
}

TEST_CASE("unknown config keys are named with a suggestion") {
  write_text_file(scratch("bad_cfg.json"),
                  R"({"model": {"layerz": 2}, "train": {"epochs": 1}})");
  const Run r = run_cli("train --config " + scratch("bad_cfg.json") + " --data " +
                        scratch("ff_train") + " --out " + scratch("run_bad"));
  CHECK(r.code == 1);
  CHECK(r.output.find("layerz") != std::string::npos);
  CHECK(r.output.find("layers") != std::string::npos);
}

TEST_CASE("evaluating a classification checkpoint on lorenz data is a head mismatch") {
  REQUIRE(run_cli("gen lorenz --out " + scratch("lz") + " --n 12 --length 32 --seed 4 --burn-in 50")
              .code == 0);
  NetworkConfig c;
  c.layers = 1;
  c.hidden = 4;
  c.input = 1;
  c.output = 10;
  c.conv = ConvMode::CD;
  c.taps = 2;
  c.head = Head::ClassifyLast;
  Archive<float> ar = params_to_archive(init_network<float>(c, 0));
  ar.meta["task"] = "smnist";
  save_archive(scratch("classifier.ckpt"), ar);
  const Run r = run_cli("eval --checkpoint " + scratch("classifier.ckpt") + " --data " +
                        scratch("lz") + " --out " + scratch("eval_bad"));
  CHECK(r.code == 1);
  CHECK(r.output.find("head") != std::string::npos);
}

TEST_CASE("a corrupted checkpoint fails its digest check") {
  const std::string path = scratch("corrupt.ckpt");
  fs::copy_file(scratch("run1") + "/best.ckpt", path, fs::copy_options::overwrite_existing);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-1, std::ios::end);
    f.put('\x55');
  }
  const Run r = run_cli("eval --checkpoint " + path + " --data " + scratch("ff_train") + " --out " +
                        scratch("eval_corrupt"));
  CHECK(r.code == 2);
  CHECK(r.output.find("digest") != std::string::npos);
}

TEST_CASE("memplan prints the published constant-dilation reference totals") {
  write_text_file(scratch("cifar_cd.json"), R"({
  "model": {"layers": 6, "hidden": 32, "input": 1, "output": 10, "head": "classify_last",
            "conv": {"variant": "cd", "taps": 8, "dilation": 32}}
})");
  const Run r = run_cli("memplan --config " + scratch("cifar_cd.json"));
  REQUIRE(r.code == 0);
  const nlohmann::json report = nlohmann::json::parse(r.output);
  CHECK(report.at("param_mem") == 40096);
  CHECK(report.at("total_mem") == 83104);
}

TEST_CASE("memplan sweeps a grid into csv") {
  write_text_file(scratch("grid.json"), R"({
  "grid": [
    {"label": "a", "model": {"layers": 6, "hidden": 32, "input": 1, "output": 10,
      "head": "classify_last", "conv": {"variant": "cd", "taps": 8, "dilation": 1}}},
    {"label": "b", "model": {"layers": 6, "hidden": 32, "input": 1, "output": 10,
      "head": "classify_last", "conv": {"variant": "cd", "taps": 8, "dilation": 32}}}
  ]
})");
  const Run r = run_cli("memplan --sweep " + scratch("grid.json") + " --csv " + scratch("grid.csv"));
  REQUIRE(r.code == 0);
  std::ifstream is(scratch("grid.csv"));
  std::string header, row_a, row_b;
  std::getline(is, header);
  std::getline(is, row_a);
  std::getline(is, row_b);
  CHECK(header.rfind("label,variant", 0) == 0);
  CHECK(row_a.rfind("a,cd,6,32,8,1,", 0) == 0);
  CHECK(row_b.find(",83104,") != std::string::npos);
}

TEST_CASE("gradcheck exits zero on the reference model") {
  const Run r = run_cli("gradcheck --out " + scratch("gc"));
  CHECK(r.code == 0);
  CHECK(r.output.find("PASS") != std::string::npos);
  const nlohmann::json report = load_json_file(scratch("gc") + "/gradcheck.json");
  CHECK(report.at("pass") == true);
  CHECK(report.at("worst").get<double>() < 1e-4);
}

TEST_CASE("export-hidden writes a tensor with aligned rows") {
  REQUIRE(run_cli("export-hidden --checkpoint " + scratch("run1") + "/best.ckpt --data " +
                  scratch("ff_train") + " --out " + scratch("hidden.mgt") + " --split val")
              .code == 0);
  const Tensor32 h = load_tensor<float>(scratch("hidden.mgt"));
  CHECK(h.rank() == 2);
  CHECK(h.dim(1) == 8);
}

TEST_CASE("eval can dump materialized kernels as csv") {
  const Run r = run_cli("eval --checkpoint " + scratch("run1") + "/best.ckpt --data " +
                        scratch("ff_train") + " --out " + scratch("eval_ok") + " --split val" +
                        " --dump-kernels " + scratch("kernels.csv"));
  REQUIRE(r.code == 0);
  std::ifstream is(scratch("kernels.csv"));
  std::string header;
  std::getline(is, header);
  CHECK(header == "layer,channel,n,value");
  std::size_t rows = 0;
  for (std::string line; std::getline(is, line);) rows += !line.empty();
  CHECK(rows == 8 * 3);  // H channels x (max_delay + 1) cells
}
