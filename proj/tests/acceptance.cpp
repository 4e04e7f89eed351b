// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Runs without any UI; training criteria use the built-in
// synthetic generator at desk scale.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <emgttl/emgttl.hpp>

using namespace emgttl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << name;
    if (!detail.empty()) std::cout << " — " << detail;
    std::cout << "\n";
    std::cout.flush();
    if (!pass) ++g_failures;
}

double elapsed_s(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct CliRun {
    int code = -1;
    std::string out;
};

CliRun run_cli(const std::string& args, const fs::path& dir) {
    fs::create_directories(dir);
    fs::path outfile = dir / "cli_stdout.txt";
    std::string cmd = std::string(EMGTTL_CLI_PATH) + " " + args + " > " + outfile.string() +
                      " 2> " + (dir / "cli_stderr.txt").string();
    int rc = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    std::ifstream f(outfile);
    std::stringstream ss;
    ss << f.rdbuf();
    r.out = ss.str();
    return r;
}

data::Dataset make_task(size_t classes, size_t trials, double duration_s, uint64_t seed) {
    data::SynthSpec spec;
    spec.num_classes = classes;
    spec.trials_per_class = trials;
    spec.duration_s = duration_s;
    spec.sample_rate_hz = 1000.0;
    spec.channels = 5;
    data::Dataset ds = data::synth_generate(spec, seed);
    for (auto& t : ds.trials) t = dsp::preprocess_chain(t, dsp::ChainSpec::custom({}, {}, 255.0));
    return ds;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------

void criterion_gradcheck(const fs::path& dir) {
    auto t0 = Clock::now();
    CliRun r = run_cli("verify --suite gradcheck", dir);
    double dt = elapsed_s(t0);
    bool pass = r.code == 0 && r.out.find("[FAIL]") == std::string::npos && dt < 60.0;
    std::ostringstream os;
    os << "cmd_verify gradcheck exit " << r.code << ", " << dt << " s (< 60 s)";
    report("gradient oracle: all ops + full tiny model, 64-bit central differences, rel err < 1e-4",
           pass, os.str());
}

void criterion_mu_law() {
    auto t0 = Clock::now();
    auto results = verify::mu_law_suite();
    double dt = elapsed_s(t0);
    bool pass = verify::all_passed(results) && dt < 5.0;
    std::ostringstream os;
    os << results.size() << " property checks on a 100001-point grid, " << dt << " s (< 5 s)";
    report("mu-law suite: odd, monotone, endpoints, inverse within 1e-9", pass, os.str());
}

void criterion_dsp() {
    auto t0 = Clock::now();
    auto results = verify::dsp_suite();
    double dt = elapsed_s(t0);
    bool pass = verify::all_passed(results) && dt < 60.0;
    std::ostringstream os;
    for (const auto& r : results)
        if (!r.pass) os << "failed: " << r.name << "; ";
    os << dt << " s (< 60 s)";
    report("DSP suite: notch >= 30 dB at 50 Hz / <= 1 dB at 10 Hz, corners at -3 dB, denoising MC",
           pass, os.str());
}

void criterion_segmentation() {
    auto t0 = Clock::now();
    bool pass = true;
    std::string why;

    // the two published geometries
    {
        dsp::SignalTrial t;
        t.channels = 5;
        t.num_samples = 40000;
        t.sample_rate_hz = 4000.0;
        t.trial_id = "g";
        t.samples.assign(5 * 40000, 0.1);
        auto a = data::segment_trial(t, {500.0, 250.0});
        auto b = data::segment_trial(t, {250.0, 100.0});
        if (a.segments.size() != 39) {
            pass = false;
            why = "500/250 ms gave " + std::to_string(a.segments.size()) + " != 39";
        }
        if (b.segments.size() != 98) {
            pass = false;
            why += " 250/100 ms gave " + std::to_string(b.segments.size()) + " != 98";
        }
    }

    // 1000 randomized (T, W, S) cases against naive enumeration
    Rng rng(424242);
    int cases = 0;
    while (cases < 1000) {
        size_t c = 1 + rng.index(4);
        size_t t_len = 64 + rng.index(4000);
        size_t w = c * (1 + rng.index(std::max<size_t>(1, t_len / c)));
        if (w > t_len || w < 1) continue;
        size_t s = 1 + rng.index(w);
        ++cases;

        size_t naive = 0;
        for (size_t start = 0; start + w <= t_len; start += s) ++naive;

        dsp::SignalTrial trial;
        trial.channels = c;
        trial.num_samples = t_len;
        trial.sample_rate_hz = 1000.0;
        trial.trial_id = "p";
        trial.samples.assign(c * t_len, 0.5);
        auto r = data::segment_trial(trial, {static_cast<double>(w), static_cast<double>(s)});
        if (r.segments.size() != naive || r.segments.size() != (t_len - w) / s + 1) {
            pass = false;
            why = "mismatch at T=" + std::to_string(t_len) + " W=" + std::to_string(w) +
                  " S=" + std::to_string(s);
            break;
        }
        if (!r.segments.empty()) {
            const auto& last = r.segments.back();
            if (last.start_sample + w > t_len) {
                pass = false;
                why = "segment overruns trial end";
                break;
            }
        }
    }
    std::ostringstream os;
    os << "k = 39 and k = 98 reproduced; 1000 property cases vs naive enumeration; "
       << elapsed_s(t0) << " s";
    if (!why.empty()) os << "; " << why;
    report("segmentation oracle: count formula matches enumeration", pass, os.str());
}

void criterion_capacity() {
    auto t0 = Clock::now();
    data::Dataset ds = make_task(4, 2, 0.85, 1001);  // 4 classes x 2 trials, k=16 each = 128 segs
    data::Split split =
        data::build_split(ds.manifest, ds.trials, data::SplitSpec{{"1", "2"}, {}}, {100.0, 50.0});

    model::ModelConfig mc;
    mc.channels = 5;
    mc.window = 100;
    mc.embed_dim = 32;
    mc.num_layers = 2;
    mc.num_heads = 4;
    mc.encoder_hidden = 64;
    mc.head_hidden1 = 32;
    mc.head_hidden2 = 16;
    mc.num_classes = 4;
    mc.dropout_p = 0.0;

    trainer::TrainConfig tc;
    tc.learning_rate = 1e-2;
    tc.batch_size = 32;
    tc.epochs = 200;
    tc.seed = 5;
    auto r = trainer::train(model::init_weights<float>(mc, 5), split.train, split.train, tc);

    size_t first99 = 0;
    for (const auto& h : r.history)
        if (h.eval_accuracy && *h.eval_accuracy >= 0.99) {
            first99 = h.epoch;
            break;
        }
    double dt = elapsed_s(t0);
    bool pass = split.train.size() == 128 && first99 > 0 && first99 <= 200 && dt < 300.0;
    std::ostringstream os;
    os << split.train.size() << " segments, >= 99% train accuracy at epoch " << first99 << ", "
       << dt << " s (< 300 s)";
    report("capacity check: tiny task memorized within 200 epochs", pass, os.str());
}

void criterion_generalization() {
    auto t0 = Clock::now();
    data::Dataset ds = make_task(6, 5, 1.5, 2002);
    data::Split split = data::build_split(ds.manifest, ds.trials,
                                          data::SplitSpec{{"1", "2", "3"}, {"4", "5"}},
                                          {150.0, 75.0});

    model::ModelConfig mc;  // smallest published variant: d=64, L=3, hidden=256, h=8
    mc.channels = 5;
    mc.window = 150;
    mc.embed_dim = 64;
    mc.num_layers = 3;
    mc.num_heads = 8;
    mc.encoder_hidden = 256;
    mc.num_classes = 6;
    mc.dropout_p = 0.1;

    std::vector<double> accs;
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        trainer::TrainConfig tc;
        tc.learning_rate = 1e-3;
        tc.batch_size = 64;
        tc.epochs = 15;
        tc.seed = seed;
        auto r = trainer::train(model::init_weights<float>(mc, seed), split.train, {}, tc);
        accs.push_back(trainer::evaluate(r.weights, split.test).accuracy);
    }
    double mean = (accs[0] + accs[1] + accs[2]) / 3.0;
    double dt = elapsed_s(t0);
    bool pass = mean >= 2.0 / 6.0;
    std::ostringstream os;
    os << "held-out-trial accuracy per seed: " << accs[0] << ", " << accs[1] << ", " << accs[2]
       << "; mean " << mean << " vs 2x chance 0.333; " << dt << " s";
    report("generalization smoke: smallest variant at >= 2x chance over 3 seeds", pass, os.str());
}

void criterion_transfer(const fs::path& dir) {
    auto t0 = Clock::now();
    data::Dataset task_a = make_task(6, 5, 1.0, 3003);
    data::Dataset task_b = make_task(4, 5, 1.0, 4004);
    data::SegmentationConfig seg{150.0, 75.0};
    data::SplitSpec sp{{"1", "2", "3"}, {"4", "5"}};
    data::Split split_a = data::build_split(task_a.manifest, task_a.trials, sp, seg);
    data::Split split_b = data::build_split(task_b.manifest, task_b.trials, sp, seg);

    model::ModelConfig mc;
    mc.channels = 5;
    mc.window = 150;
    mc.embed_dim = 32;
    mc.num_layers = 2;
    mc.num_heads = 4;
    mc.encoder_hidden = 64;
    mc.head_hidden1 = 32;
    mc.head_hidden2 = 16;
    mc.num_classes = 6;
    mc.dropout_p = 0.0;

    trainer::TrainConfig pre;
    pre.learning_rate = 1e-3;
    pre.batch_size = 64;
    pre.epochs = 15;
    pre.seed = 11;
    auto rp = trainer::train(model::init_weights<float>(mc, 11), split_a.train, {}, pre);
    trainer::Checkpoint ckpt;
    ckpt.config = mc;
    ckpt.weights = rp.weights;

    // (a) bit-exact transfer of every non-head tensor
    model::ModelWeights<float> moved =
        trainer::transfer(ckpt, 4, trainer::TransferMode::head_only_reinit, 7);
    bool bits_ok = trainer::encoder_hash(moved) == trainer::encoder_hash(ckpt.weights);

    // (b) matched-budget comparison over 5 seeds
    std::vector<double> ft_acc, scratch_acc;
    for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
        trainer::TrainConfig tc;
        tc.learning_rate = 1e-3;
        tc.batch_size = 64;
        tc.epochs = 8;
        tc.seed = seed;

        auto wf = trainer::transfer(ckpt, 4, trainer::TransferMode::head_only_reinit, seed);
        auto rf = trainer::train(std::move(wf), split_b.train, {}, tc);
        ft_acc.push_back(trainer::evaluate(rf.weights, split_b.test).accuracy);

        model::ModelConfig ms = mc;
        ms.num_classes = 4;
        auto rs = trainer::train(model::init_weights<float>(ms, seed), split_b.train, {}, tc);
        scratch_acc.push_back(trainer::evaluate(rs.weights, split_b.test).accuracy);
    }
    double med_ft = median(ft_acc);
    double med_scratch = median(scratch_acc);

    // emit the full comparison for the report
    fs::create_directories(dir);
    std::ofstream cmp(dir / "transfer_comparison.csv");
    cmp << "seed,finetuned_accuracy,scratch_accuracy\n";
    for (size_t i = 0; i < ft_acc.size(); ++i)
        cmp << (i + 1) << "," << ft_acc[i] << "," << scratch_acc[i] << "\n";
    cmp << "median," << med_ft << "," << med_scratch << "\n";

    bool pass = bits_ok && med_ft >= med_scratch - 0.02;
    double dt = elapsed_s(t0);
    std::ostringstream os;
    os << "non-head tensors " << (bits_ok ? "bit-exact" : "NOT bit-exact")
       << "; median fine-tuned " << med_ft << " vs scratch " << med_scratch
       << " (tolerance -2 pp); comparison in " << (dir / "transfer_comparison.csv").string()
       << "; " << dt << " s";
    report("transfer mechanism: bit-exact encoder copy and matched-budget comparison", pass,
           os.str());
}

void criterion_variant_study(const fs::path& dir) {
    auto t0 = Clock::now();
    fs::path csv = dir / "variant_report.csv";
    CliRun r = run_cli("report --seeds 3 --epochs 2 --out " + csv.string(), dir);
    bool pass = r.code == 0 && fs::exists(csv);
    size_t rows = 0;
    std::string header;
    if (pass) {
        std::ifstream f(csv);
        std::getline(f, header);
        pass = header == "variant_id,window_ms,mean_accuracy,std_accuracy,param_count";
        std::string line;
        while (std::getline(f, line))
            if (!line.empty()) ++rows;
        pass = pass && rows == 8;  // 4 variants x 2 window geometries
    }
    double dt = elapsed_s(t0);
    std::ostringstream os;
    os << "cmd_report exit " << r.code << ", " << rows << " rows (4 variants x 2 geometries, 3 seeds), "
       << dt << " s";
    report("variant study: report reproduces the error-bar structure", pass, os.str());
}

void criterion_determinism(const fs::path& dir) {
    auto t0 = Clock::now();
    data::Dataset ds = make_task(3, 2, 0.5, 5005);
    data::Split split =
        data::build_split(ds.manifest, ds.trials, data::SplitSpec{{"1", "2"}, {}}, {100.0, 50.0});

    model::ModelConfig mc;
    mc.channels = 5;
    mc.window = 100;
    mc.embed_dim = 16;
    mc.num_layers = 1;
    mc.num_heads = 2;
    mc.encoder_hidden = 32;
    mc.head_hidden1 = 16;
    mc.head_hidden2 = 8;
    mc.num_classes = 3;
    mc.dropout_p = 0.1;

    trainer::TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.batch_size = 32;
    tc.epochs = 4;
    tc.seed = 77;

    auto r1 = trainer::train(model::init_weights<float>(mc, 77), split.train, {}, tc);
    auto r2 = trainer::train(model::init_weights<float>(mc, 77), split.train, {}, tc);
    bool same_weights = trainer::weights_hash(r1.weights) == trainer::weights_hash(r2.weights);

    fs::create_directories(dir);
    trainer::Checkpoint c1;
    c1.config = mc;
    c1.weights = r1.weights;
    c1.provenance = {{"dataset", ds.manifest.name}, {"seed", 77}};
    trainer::Checkpoint c2 = c1;
    c2.weights = r2.weights;
    trainer::save_checkpoint(c1, dir / "det1.emgt");
    trainer::save_checkpoint(c2, dir / "det2.emgt");
    std::ifstream f1(dir / "det1.emgt", std::ios::binary), f2(dir / "det2.emgt", std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    bool same_files = !s1.empty() && s1 == s2;

    trainer::Checkpoint back = trainer::load_checkpoint(dir / "det1.emgt");
    bool roundtrip = trainer::weights_hash(back.weights) == trainer::weights_hash(r1.weights);

    bool rejected = false;
    std::string diag;
    {
        std::fstream f(dir / "det2.emgt", std::ios::in | std::ios::out | std::ios::binary);
        f.write("JUNK", 4);
    }
    try {
        trainer::load_checkpoint(dir / "det2.emgt");
    } catch (const LoadError& e) {
        rejected = true;
        diag = e.what();
    }

    bool pass = same_weights && same_files && roundtrip && rejected;
    std::ostringstream os;
    os << "weights hash equal: " << (same_weights ? "yes" : "no") << "; checkpoint files identical: "
       << (same_files ? "yes" : "no") << "; save/load hash-equal: " << (roundtrip ? "yes" : "no")
       << "; corrupted file rejected: " << (rejected ? "yes" : "no") << "; " << elapsed_s(t0)
       << " s";
    report("determinism & persistence: bit-identical checkpoints, round-trip, corruption diagnostics",
           pass, os.str());
}

}  // namespace

int main() {
    fs::path dir = fs::temp_directory_path() / "emgttl_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);

    auto t0 = Clock::now();
    criterion_gradcheck(dir);
    criterion_mu_law();
    criterion_dsp();
    criterion_segmentation();
    criterion_capacity();
    criterion_generalization();
    criterion_transfer(dir);
    criterion_variant_study(dir);
    criterion_determinism(dir);

    std::cout << (g_failures == 0 ? "ALL CRITERIA PASSED" : "CRITERIA FAILED") << " ("
              << elapsed_s(t0) << " s total)\n";
    return g_failures == 0 ? 0 : 1;
}
