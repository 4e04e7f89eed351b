#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <emgttl/dataset.hpp>
#include <emgttl/trainer.hpp>

using namespace emgttl;
namespace fs = std::filesystem;
using Catch::Approx;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path work_dir() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "emgttl_cli_suite";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

CliResult run_cli(const std::string& args) {
    fs::path out = work_dir() / "stdout.txt";
    fs::path err = work_dir() / "stderr.txt";
    std::string cmd = std::string(EMGTTL_CLI_PATH) + " " + args + " > " + out.string() + " 2> " +
                      err.string();
    int rc = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
    std::ofstream f(p);
    f << j.dump(2) << "\n";
}

nlohmann::json base_config(const fs::path& manifest) {
    return nlohmann::json{
        {"dataset",
         {{"manifest", manifest.string()},
          {"split", {{"train", {"1", "2"}}, {"test", {}}}},
          {"segmentation", {{"window_ms", 100.0}, {"step_ms", 50.0}}},
          {"eval_on_train", true}}},
        {"preprocess", {{"chain", "none"}, {"mu", 255.0}}},
        {"model",
         {{"embed_dim", 16},
          {"num_layers", 1},
          {"num_heads", 2},
          {"encoder_hidden", 32},
          {"head_hidden", {16, 8}},
          {"dropout_p", 0.0}}},
        {"train",
         {{"learning_rate", 0.01},
          {"batch_size", 32},
          {"epochs", 150},
          {"seed", 7},
          {"weight_decay", 0.00055}}}};
}

}  // namespace

TEST_CASE("synth writes a dataset that loads and validates") {
    fs::path out = work_dir() / "ds_default";
    CliResult r = run_cli("synth --classes 4 --trials 2 --duration-s 1.0 --rate-hz 500 --seed 7 --out " +
                          out.string());
    REQUIRE(r.code == 0);
    data::Dataset ds = data::load_dataset(out / "manifest.json");
    CHECK(ds.manifest.channels == 5);
    CHECK(ds.manifest.classes.size() == 4);
    CHECK(ds.trials.size() == 8);
    CHECK(ds.trials[0].num_samples == 500);
}

TEST_CASE("synth with a repeated seed is byte-identical") {
    fs::path a = work_dir() / "ds_a";
    fs::path b = work_dir() / "ds_b";
    REQUIRE(run_cli("synth --classes 2 --trials 1 --duration-s 0.5 --rate-hz 500 --seed 11 --out " +
                    a.string()).code == 0);
    REQUIRE(run_cli("synth --classes 2 --trials 1 --duration-s 0.5 --rate-hz 500 --seed 11 --out " +
                    b.string()).code == 0);
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    data::Dataset ds = data::load_dataset(a / "manifest.json");
    for (const auto& e : ds.manifest.trials)
        CHECK(slurp(a / e.file) == slurp(b / e.file));
}

TEST_CASE("synth with zero channels exits 2") {
    CliResult r = run_cli("synth --channels 0 --out " + (work_dir() / "ds_bad").string());
    CHECK(r.code == 2);
}

TEST_CASE("train overfits the tiny task and reports accuracy on stdout") {
    fs::path ds = work_dir() / "ds_default";
    fs::path cfg_path = work_dir() / "train_cfg.json";
    write_json(cfg_path, base_config(ds / "manifest.json"));
    fs::path ckpt = work_dir() / "tiny.emgt";

    CliResult r = run_cli("train --config " + cfg_path.string() + " --out " + ckpt.string());
    INFO(r.err);
    REQUIRE(r.code == 0);

    // the accuracy contract: last stdout line is accuracy=<float>
    auto pos = r.out.rfind("accuracy=");
    REQUIRE(pos != std::string::npos);
    double acc = std::stod(r.out.substr(pos + 9));
    CHECK(acc >= 0.99);

    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(work_dir() / "tiny.emgt.history.jsonl"));
    trainer::Checkpoint loaded = trainer::load_checkpoint(ckpt);
    CHECK(loaded.provenance.at("dataset") == "synthetic");
    CHECK(loaded.config.num_classes == 4);
}

TEST_CASE("train rejects d not divisible by h with exit code 2 naming the constraint") {
    fs::path cfg_path = work_dir() / "bad_heads.json";
    nlohmann::json cfg = base_config(work_dir() / "ds_default" / "manifest.json");
    cfg["model"]["embed_dim"] = 65;
    cfg["model"]["num_heads"] = 8;
    write_json(cfg_path, cfg);
    CliResult r = run_cli("train --config " + cfg_path.string() + " --out " +
                          (work_dir() / "x.emgt").string());
    CHECK(r.code == 2);
    CHECK(r.err.find("d mod h") != std::string::npos);
}

TEST_CASE("train with a missing manifest field exits 2 naming the field") {
    fs::path cfg_path = work_dir() / "no_manifest.json";
    nlohmann::json cfg = base_config("unused");
    cfg["dataset"].erase("manifest");
    write_json(cfg_path, cfg);
    CliResult r = run_cli("train --config " + cfg_path.string() + " --out " +
                          (work_dir() / "x.emgt").string());
    CHECK(r.code == 2);
    CHECK(r.err.find("dataset.manifest") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected (typo safety)") {
    fs::path cfg_path = work_dir() / "typo.json";
    nlohmann::json cfg = base_config(work_dir() / "ds_default" / "manifest.json");
    cfg["train"]["learning_rte"] = 1e-3;
    write_json(cfg_path, cfg);
    CliResult r = run_cli("train --config " + cfg_path.string() + " --out " +
                          (work_dir() / "x.emgt").string());
    CHECK(r.code == 2);
    CHECK(r.err.find("learning_rte") != std::string::npos);
}

TEST_CASE("finetune end to end: pretrain 6 classes, fine-tune to 4, provenance chains") {
    // 6-class source dataset
    fs::path src_ds = work_dir() / "ds_src6";
    REQUIRE(run_cli("synth --classes 6 --trials 2 --duration-s 1.0 --rate-hz 500 --seed 21 --out " +
                    src_ds.string()).code == 0);
    fs::path src_cfg = work_dir() / "src_cfg.json";
    nlohmann::json cfg = base_config(src_ds / "manifest.json");
    cfg["train"]["epochs"] = 5;
    write_json(src_cfg, cfg);
    fs::path src_ckpt = work_dir() / "src6.emgt";
    REQUIRE(run_cli("train --config " + src_cfg.string() + " --out " + src_ckpt.string()).code == 0);

    // 4-class target dataset, same geometry
    fs::path dst_cfg = work_dir() / "dst_cfg.json";
    nlohmann::json cfg2 = base_config(work_dir() / "ds_default" / "manifest.json");
    cfg2["train"]["epochs"] = 5;
    cfg2["transfer"] = {{"mode", "head-only-reinit"}};
    write_json(dst_cfg, cfg2);
    fs::path dst_ckpt = work_dir() / "ft4.emgt";
    CliResult r = run_cli("finetune --config " + dst_cfg.string() + " --from " + src_ckpt.string() +
                          " --out " + dst_ckpt.string());
    INFO(r.err);
    REQUIRE(r.code == 0);

    trainer::Checkpoint src = trainer::load_checkpoint(src_ckpt);
    trainer::Checkpoint dst = trainer::load_checkpoint(dst_ckpt);
    CHECK(dst.config.num_classes == 4);
    REQUIRE(dst.provenance.contains("finetuned_from"));
    CHECK(dst.provenance["finetuned_from"]["weights_hash"] ==
          hash_hex(trainer::weights_hash(src.weights)));
}

TEST_CASE("finetune from a nonexistent checkpoint exits 1") {
    CliResult r = run_cli("finetune --config " + (work_dir() / "dst_cfg.json").string() +
                          " --from " + (work_dir() / "missing.emgt").string() + " --out " +
                          (work_dir() / "x.emgt").string());
    CHECK(r.code == 1);
}

TEST_CASE("finetune with an incompatible window exits 1 naming the positional table") {
    fs::path cfg_path = work_dir() / "dst_wrong_window.json";
    nlohmann::json cfg = base_config(work_dir() / "ds_default" / "manifest.json");
    cfg["dataset"]["segmentation"]["window_ms"] = 200.0;  // W differs from the source checkpoint
    write_json(cfg_path, cfg);
    CliResult r = run_cli("finetune --config " + cfg_path.string() + " --from " +
                          (work_dir() / "src6.emgt").string() + " --out " +
                          (work_dir() / "x.emgt").string());
    CHECK(r.code == 1);
    CHECK(r.err.find("E_pos") != std::string::npos);
}

TEST_CASE("eval prints metrics JSON for a checkpoint") {
    fs::path cfg_path = work_dir() / "eval_cfg.json";
    nlohmann::json cfg = base_config(work_dir() / "ds_default" / "manifest.json");
    cfg["dataset"]["split"] = {{"train", {"1"}}, {"test", {"2"}}};
    cfg["dataset"]["eval_on_train"] = false;
    write_json(cfg_path, cfg);
    CliResult r = run_cli("eval --ckpt " + (work_dir() / "tiny.emgt").string() + " --config " +
                          cfg_path.string());
    INFO(r.err);
    REQUIRE(r.code == 0);
    nlohmann::json m = nlohmann::json::parse(r.out);
    CHECK(m.contains("accuracy"));
    CHECK(m.contains("confusion"));
    CHECK(m["confusion"].size() == 4);
}

TEST_CASE("eval with an empty test split exits 1 with the expected message") {
    fs::path cfg_path = work_dir() / "eval_empty.json";
    nlohmann::json cfg = base_config(work_dir() / "ds_default" / "manifest.json");
    cfg["dataset"]["eval_on_train"] = false;  // test list is empty in base_config
    write_json(cfg_path, cfg);
    CliResult r = run_cli("eval --ckpt " + (work_dir() / "tiny.emgt").string() + " --config " +
                          cfg_path.string());
    CHECK(r.code == 1);
    CHECK(r.err.find("empty evaluation set") != std::string::npos);
}

TEST_CASE("report with a single seed exits 2") {
    CliResult r = run_cli("report --seeds 1");
    CHECK(r.code == 2);
    CHECK(r.err.find("2 seeds") != std::string::npos);
}

TEST_CASE("verify gradcheck passes on a fresh build") {
    CliResult r = run_cli("verify --suite gradcheck");
    INFO(r.out);
    CHECK(r.code == 0);
    CHECK(r.out.find("[FAIL]") == std::string::npos);
    CHECK(r.out.find("full model") != std::string::npos);
}

TEST_CASE("verify rejects unknown suites with exit 2") {
    CliResult r = run_cli("verify --suite nonsense");
    CHECK(r.code == 2);
}

TEST_CASE("rerunning a training command overwrites outputs identically") {
    fs::path cfg_path = work_dir() / "det_cfg.json";
    nlohmann::json cfg = base_config(work_dir() / "ds_default" / "manifest.json");
    cfg["train"]["epochs"] = 3;
    write_json(cfg_path, cfg);
    fs::path c1 = work_dir() / "det1.emgt";
    fs::path c2 = work_dir() / "det2.emgt";
    REQUIRE(run_cli("train --config " + cfg_path.string() + " --out " + c1.string()).code == 0);
    REQUIRE(run_cli("train --config " + cfg_path.string() + " --out " + c2.string()).code == 0);
    CHECK(slurp(c1) == slurp(c2));
}
