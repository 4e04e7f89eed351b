// emgttl: command-line surface for the pipeline — dataset synthesis,
// training, transfer, evaluation, verification and the variant report.
//
// Exit codes: 0 ok, 1 runtime error, 2 usage/configuration error.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <emgttl/emgttl.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace emgttl;

namespace {

// ---------------------------------------------------------------------------
// Run configuration (JSON file; unknown keys rejected)
// ---------------------------------------------------------------------------

struct RunConfig {
    // dataset
    std::string manifest;
    std::optional<std::string> split_preset;
    std::set<std::string> split_train, split_test;
    data::SegmentationConfig segmentation;
    bool eval_on_train = false;
    // preprocess
    std::string chain = "db1";
    double mu = 255.0;
    bool db4_literal_bandpass = false;
    std::vector<dsp::FilterSpec> custom_filters;
    std::optional<dsp::DenoiseSpec> custom_denoise;
    // model
    model::ModelConfig model;
    bool model_classes_given = false;
    // train
    trainer::TrainConfig train;
    // transfer
    std::optional<std::string> transfer_source;
    trainer::TransferMode transfer_mode = trainer::TransferMode::head_only_reinit;
    bool transfer_lr_given = false;
    bool train_lr_given = false;
};

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown key '" + it.key() + "' in config section " + where);
}

dsp::FilterSpec parse_filter(const json& j) {
    reject_unknown(j, {"kind", "f0_hz", "cutoff_hz", "q_factor", "order", "zero_phase"}, "filter");
    dsp::FilterSpec f;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "notch") f.kind = dsp::FilterKind::notch;
    else if (kind == "lowpass") f.kind = dsp::FilterKind::lowpass;
    else if (kind == "highpass") f.kind = dsp::FilterKind::highpass;
    else if (kind == "bandstop") f.kind = dsp::FilterKind::bandstop;
    else if (kind == "bandpass") f.kind = dsp::FilterKind::bandpass;
    else throw ConfigError("unknown filter kind '" + kind + "'");
    f.f0_hz = j.value("f0_hz", 0.0);
    f.cutoff_hz = j.value("cutoff_hz", 0.0);
    f.q_factor = j.value("q_factor", 35.0);
    f.order = j.value("order", 4);
    f.zero_phase = j.value("zero_phase", true);
    return f;
}

RunConfig parse_run_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    reject_unknown(j, {"dataset", "preprocess", "model", "train", "transfer"}, "(top level)");

    RunConfig rc;
    try {
        if (!j.contains("dataset")) throw ConfigError("config: missing 'dataset' section");
        const json& jd = j.at("dataset");
        reject_unknown(jd, {"manifest", "split", "segmentation", "eval_on_train"}, "dataset");
        if (!jd.contains("manifest"))
            throw ConfigError("config: missing field 'dataset.manifest'");
        rc.manifest = jd.at("manifest").get<std::string>();
        rc.eval_on_train = jd.value("eval_on_train", false);
        if (jd.contains("split")) {
            const json& js = jd.at("split");
            reject_unknown(js, {"preset", "train", "test"}, "dataset.split");
            if (js.contains("preset")) {
                rc.split_preset = js.at("preset").get<std::string>();
            } else {
                for (const auto& v : js.value("train", json::array()))
                    rc.split_train.insert(v.get<std::string>());
                for (const auto& v : js.value("test", json::array()))
                    rc.split_test.insert(v.get<std::string>());
            }
        } else {
            throw ConfigError("config: missing field 'dataset.split'");
        }
        if (jd.contains("segmentation")) {
            const json& jg = jd.at("segmentation");
            reject_unknown(jg, {"window_ms", "step_ms"}, "dataset.segmentation");
            rc.segmentation.window_ms = jg.at("window_ms").get<double>();
            rc.segmentation.step_ms = jg.at("step_ms").get<double>();
        }

        if (j.contains("preprocess")) {
            const json& jp = j.at("preprocess");
            reject_unknown(jp, {"chain", "mu", "db4_literal_bandpass", "filters", "denoise"},
                           "preprocess");
            rc.chain = jp.value("chain", "db1");
            rc.mu = jp.value("mu", 255.0);
            rc.db4_literal_bandpass = jp.value("db4_literal_bandpass", false);
            if (jp.contains("filters"))
                for (const auto& jf : jp.at("filters")) rc.custom_filters.push_back(parse_filter(jf));
            if (jp.contains("denoise")) {
                const json& jn = jp.at("denoise");
                reject_unknown(jn, {"wavelet", "levels"}, "preprocess.denoise");
                dsp::DenoiseSpec dn;
                dn.wavelet = jn.value("wavelet", std::string("db4"));
                dn.levels = jn.value("levels", 4);
                rc.custom_denoise = dn;
            }
            if (rc.chain != "db1" && rc.chain != "db4" && rc.chain != "custom" && rc.chain != "none")
                throw ConfigError("config: preprocess.chain must be db1, db4, custom or none");
        }

        if (j.contains("model")) {
            const json& jm = j.at("model");
            reject_unknown(jm,
                           {"embed_dim", "num_layers", "num_heads", "encoder_hidden", "head_hidden",
                            "num_classes", "dropout_p", "encoder_two_hidden", "positional"},
                           "model");
            rc.model.embed_dim = jm.value("embed_dim", rc.model.embed_dim);
            rc.model.num_layers = jm.value("num_layers", rc.model.num_layers);
            rc.model.num_heads = jm.value("num_heads", rc.model.num_heads);
            rc.model.encoder_hidden = jm.value("encoder_hidden", rc.model.encoder_hidden);
            if (jm.contains("head_hidden")) {
                auto hh = jm.at("head_hidden").get<std::vector<size_t>>();
                if (hh.size() != 2)
                    throw ConfigError("config: model.head_hidden must be a pair [h1, h2]");
                rc.model.head_hidden1 = hh[0];
                rc.model.head_hidden2 = hh[1];
            }
            if (jm.contains("num_classes")) {
                rc.model.num_classes = jm.at("num_classes").get<size_t>();
                rc.model_classes_given = true;
            }
            rc.model.dropout_p = jm.value("dropout_p", rc.model.dropout_p);
            rc.model.encoder_two_hidden = jm.value("encoder_two_hidden", false);
            std::string pos = jm.value("positional", std::string("learned"));
            if (pos == "learned") rc.model.positional = model::Positional::learned;
            else if (pos == "sinusoid") rc.model.positional = model::Positional::sinusoid;
            else throw ConfigError("config: model.positional must be learned or sinusoid");
        }

        if (j.contains("train")) {
            const json& jt = j.at("train");
            reject_unknown(jt,
                           {"learning_rate", "betas", "weight_decay", "batch_size", "epochs",
                            "seed", "precision"},
                           "train");
            if (jt.contains("learning_rate")) {
                rc.train.learning_rate = jt.at("learning_rate").get<double>();
                rc.train_lr_given = true;
            }
            if (jt.contains("betas")) {
                auto b = jt.at("betas").get<std::vector<double>>();
                if (b.size() != 2) throw ConfigError("config: train.betas must be [beta1, beta2]");
                rc.train.beta1 = b[0];
                rc.train.beta2 = b[1];
            }
            rc.train.weight_decay = jt.value("weight_decay", rc.train.weight_decay);
            rc.train.batch_size = jt.value("batch_size", rc.train.batch_size);
            rc.train.epochs = jt.value("epochs", rc.train.epochs);
            rc.train.seed = jt.value("seed", rc.train.seed);
            rc.train.precision = jt.value("precision", rc.train.precision);
        }

        if (j.contains("transfer")) {
            const json& jx = j.at("transfer");
            reject_unknown(jx, {"source", "mode"}, "transfer");
            if (jx.contains("source")) rc.transfer_source = jx.at("source").get<std::string>();
            rc.transfer_mode =
                trainer::transfer_mode_from_string(jx.value("mode", std::string("head-only-reinit")));
        }
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return rc;
}

json resolved_config_json(const RunConfig& rc) {
    json j;
    j["dataset"] = {{"manifest", rc.manifest},
                    {"segmentation",
                     {{"window_ms", rc.segmentation.window_ms}, {"step_ms", rc.segmentation.step_ms}}},
                    {"eval_on_train", rc.eval_on_train}};
    if (rc.split_preset) j["dataset"]["split"] = {{"preset", *rc.split_preset}};
    else
        j["dataset"]["split"] = {{"train", rc.split_train}, {"test", rc.split_test}};
    j["preprocess"] = {{"chain", rc.chain}, {"mu", rc.mu}};
    j["model"] = trainer::model_config_to_json(rc.model);
    j["train"] = {{"learning_rate", rc.train.learning_rate},
                  {"betas", {rc.train.beta1, rc.train.beta2}},
                  {"weight_decay", rc.train.weight_decay},
                  {"batch_size", rc.train.batch_size},
                  {"epochs", rc.train.epochs},
                  {"seed", rc.train.seed},
                  {"precision", rc.train.precision}};
    if (rc.transfer_source)
        j["transfer"] = {{"source", *rc.transfer_source},
                         {"mode", rc.transfer_mode == trainer::TransferMode::head_only_reinit
                                      ? "head-only-reinit"
                                      : "freeze-encoder"}};
    return j;
}

dsp::ChainSpec chain_from_config(const RunConfig& rc) {
    if (rc.chain == "db1") return dsp::ChainSpec::db1_style(rc.mu);
    if (rc.chain == "db4") return dsp::ChainSpec::db4_style(rc.mu, rc.db4_literal_bandpass);
    if (rc.chain == "custom")
        return dsp::ChainSpec::custom(rc.custom_filters, rc.custom_denoise, rc.mu);
    return dsp::ChainSpec::custom({}, {}, rc.mu);  // "none": rescale + mu-law only
}

struct PreparedData {
    data::Dataset dataset;
    data::Split split;
};

PreparedData prepare_data(const RunConfig& rc) {
    PreparedData out;
    out.dataset = data::load_dataset(rc.manifest);
    dsp::ChainSpec chain = chain_from_config(rc);
    int workers = std::min<int>(env_thread_cap(), static_cast<int>(out.dataset.trials.size()));
    if (workers > 1) {
        std::vector<std::thread> threads;
        std::atomic<size_t> next{0};
        std::vector<std::string> errors(out.dataset.trials.size());
        for (int t = 0; t < workers; ++t)
            threads.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < out.dataset.trials.size();
                     i = next.fetch_add(1)) {
                    try {
                        out.dataset.trials[i] = dsp::preprocess_chain(out.dataset.trials[i], chain);
                    } catch (const std::exception& e) {
                        errors[i] = e.what();
                    }
                }
            });
        for (auto& th : threads) th.join();
        for (const std::string& e : errors)
            if (!e.empty()) throw DataError(e);
    } else {
        for (auto& trial : out.dataset.trials) trial = dsp::preprocess_chain(trial, chain);
    }

    data::SplitSpec split;
    if (rc.split_preset) split = data::SplitSpec::preset(*rc.split_preset);
    else {
        split.train_trial_ids = rc.split_train;
        split.test_trial_ids = rc.split_test;
    }
    out.split = data::build_split(out.dataset.manifest, out.dataset.trials, split, rc.segmentation);
    if (rc.eval_on_train) out.split.test = out.split.train;
    return out;
}

model::ModelConfig resolve_model_config(const RunConfig& rc, const data::DatasetManifest& m) {
    model::ModelConfig mc = rc.model;
    mc.channels = m.channels;
    mc.window = rc.segmentation.window_samples(m.sample_rate_hz);
    if (rc.model_classes_given && mc.num_classes != m.classes.size())
        throw ConfigError("config: model.num_classes (" + std::to_string(mc.num_classes) +
                          ") disagrees with the dataset class list (" +
                          std::to_string(m.classes.size()) + ")");
    mc.num_classes = m.classes.size();
    mc.validate();
    return mc;
}

json history_json(const std::vector<trainer::EpochRecord>& history) {
    json arr = json::array();
    for (const auto& r : history) {
        json e{{"epoch", r.epoch}, {"train_loss", r.train_loss}};
        if (r.eval_accuracy) e["eval_accuracy"] = *r.eval_accuracy;
        arr.push_back(e);
    }
    return arr;
}

// Train with either precision, always checkpointing as float32.
trainer::Checkpoint run_training(model::ModelWeights<float> init, const RunConfig& rc,
                                 const PreparedData& pd, json extra_provenance,
                                 std::optional<double>* final_accuracy,
                                 std::vector<trainer::EpochRecord>* history_out) {
    trainer::Checkpoint ckpt;
    std::vector<trainer::EpochRecord> history;
    if (rc.train.precision == 64) {
        auto w = trainer::weights_cast<double>(init);
        auto result = trainer::train(std::move(w), pd.split.train, pd.split.test, rc.train);
        ckpt.weights = trainer::weights_cast<float>(result.weights);
        history = result.history;
    } else {
        auto result = trainer::train(std::move(init), pd.split.train, pd.split.test, rc.train);
        ckpt.weights = result.weights;
        history = result.history;
    }
    ckpt.config = ckpt.weights.config;
    ckpt.provenance = {{"dataset", pd.dataset.manifest.name},
                       {"epochs", rc.train.epochs},
                       {"seed", rc.train.seed},
                       {"learning_rate", rc.train.learning_rate},
                       {"history", history_json(history)}};
    for (auto it = extra_provenance.begin(); it != extra_provenance.end(); ++it)
        ckpt.provenance[it.key()] = it.value();
    if (!history.empty() && history.back().eval_accuracy)
        *final_accuracy = *history.back().eval_accuracy;
    *history_out = history;
    return ckpt;
}

int run_guarded(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EMGTTL: transformer classification of multi-channel sEMG with transfer learning"};
    app.require_subcommand(1);

    // --- synth ---
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset (manifest + trials)");
    data::SynthSpec synth_spec;
    uint64_t synth_seed = 42;
    std::string synth_out = "synth-data";
    synth->add_option("--classes", synth_spec.num_classes, "number of classes");
    synth->add_option("--subjects", synth_spec.subjects, "number of subjects");
    synth->add_option("--trials", synth_spec.trials_per_class, "trials per class per subject");
    synth->add_option("--duration-s", synth_spec.duration_s, "trial duration in seconds");
    synth->add_option("--rate-hz", synth_spec.sample_rate_hz, "sample rate in Hz");
    synth->add_option("--channels", synth_spec.channels, "number of channels");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out", synth_out, "output directory")->required();

    // --- train ---
    auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
    std::string train_config_path, train_out = "model.emgt";
    std::optional<double> ov_lr;
    std::optional<size_t> ov_epochs, ov_batch;
    std::optional<uint64_t> ov_seed;
    train_cmd->add_option("--config", train_config_path, "run config JSON")->required();
    train_cmd->add_option("--out", train_out, "output checkpoint path");
    train_cmd->add_option("--lr", ov_lr, "override train.learning_rate");
    train_cmd->add_option("--epochs", ov_epochs, "override train.epochs");
    train_cmd->add_option("--batch-size", ov_batch, "override train.batch_size");
    train_cmd->add_option("--seed", ov_seed, "override train.seed");

    // --- finetune ---
    auto* ft = app.add_subcommand("finetune", "transfer from a checkpoint and fine-tune");
    std::string ft_config_path, ft_from, ft_out = "finetuned.emgt";
    std::optional<double> ft_lr;
    std::optional<size_t> ft_epochs;
    std::optional<uint64_t> ft_seed;
    ft->add_option("--config", ft_config_path, "run config JSON")->required();
    ft->add_option("--from", ft_from, "source checkpoint")->required();
    ft->add_option("--out", ft_out, "output checkpoint path");
    ft->add_option("--lr", ft_lr, "override train.learning_rate");
    ft->add_option("--epochs", ft_epochs, "override train.epochs");
    ft->add_option("--seed", ft_seed, "override train.seed");

    // --- eval ---
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the config's test split");
    std::string ev_ckpt, ev_config_path;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--config", ev_config_path, "run config JSON")->required();

    // --- report ---
    auto* rp = app.add_subcommand("report", "architecture-variant error-bar study (CSV)");
    std::string rp_variants_path, rp_out;
    int rp_seeds = 3;
    uint64_t rp_base_seed = 1;
    size_t rp_epochs = 2;
    rp->add_option("--variants", rp_variants_path, "variants JSON (defaults to the 4 built-ins)");
    rp->add_option("--seeds", rp_seeds, "number of seeds (>= 2)");
    rp->add_option("--base-seed", rp_base_seed, "first seed value");
    rp->add_option("--epochs", rp_epochs, "training epochs per run");
    rp->add_option("--out", rp_out, "CSV output path (default stdout)");

    // --- verify ---
    auto* vf = app.add_subcommand("verify", "run built-in verification suites");
    std::string vf_suite = "all";
    vf->add_option("--suite", vf_suite, "gradcheck | dsp | all")
        ->check(CLI::IsMember({"gradcheck", "dsp", "all"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (synth->parsed()) {
        return run_guarded([&] {
            data::Dataset ds = data::synth_generate(synth_spec, synth_seed);
            data::save_dataset(synth_out, ds);
            std::cerr << "wrote " << ds.trials.size() << " trials to " << synth_out << "\n";
            std::cout << "manifest=" << (fs::path(synth_out) / "manifest.json").string() << "\n";
        });
    }

    if (train_cmd->parsed()) {
        return run_guarded([&] {
            RunConfig rc = parse_run_config(train_config_path);
            if (ov_lr) rc.train.learning_rate = *ov_lr;
            if (ov_epochs) rc.train.epochs = *ov_epochs;
            if (ov_batch) rc.train.batch_size = *ov_batch;
            if (ov_seed) rc.train.seed = *ov_seed;
            rc.train.validate();
            PreparedData pd = prepare_data(rc);
            model::ModelConfig mc = resolve_model_config(rc, pd.dataset.manifest);
            rc.model = mc;
            std::cerr << "resolved config: " << resolved_config_json(rc).dump() << "\n";
            if (pd.split.train.empty()) throw ConfigError("train: split produced no training segments");

            model::ModelWeights<float> w = model::init_weights<float>(mc, rc.train.seed);
            std::optional<double> final_acc;
            std::vector<trainer::EpochRecord> history;
            trainer::Checkpoint ckpt = run_training(std::move(w), rc, pd, json::object(),
                                                    &final_acc, &history);
            trainer::save_checkpoint(ckpt, train_out);
            trainer::write_history(train_out + ".history.jsonl", history);
            std::cerr << "checkpoint written to " << train_out << "\n";
            if (final_acc) std::cout << "accuracy=" << *final_acc << "\n";
        });
    }

    if (ft->parsed()) {
        return run_guarded([&] {
            RunConfig rc = parse_run_config(ft_config_path);
            if (ft_lr) {
                rc.train.learning_rate = *ft_lr;
                rc.train_lr_given = true;
            }
            if (ft_epochs) rc.train.epochs = *ft_epochs;
            if (ft_seed) rc.train.seed = *ft_seed;

            trainer::Checkpoint src = trainer::load_checkpoint(ft_from);
            if (!rc.train_lr_given) {
                // default fine-tuning recipe: a third of the pretraining rate
                if (src.provenance.contains("learning_rate"))
                    rc.train.learning_rate = src.provenance["learning_rate"].get<double>() / 3.0;
                else
                    throw ConfigError(
                        "finetune: train.learning_rate not set and source checkpoint records none");
            }
            rc.train.validate();

            PreparedData pd = prepare_data(rc);
            model::ModelConfig target = src.config;
            target.channels = pd.dataset.manifest.channels;
            target.window = rc.segmentation.window_samples(pd.dataset.manifest.sample_rate_hz);
            target.num_classes = pd.dataset.manifest.classes.size();
            target.dropout_p = rc.model.dropout_p;
            rc.model = target;
            std::cerr << "resolved config: " << resolved_config_json(rc).dump() << "\n";
            if (pd.split.train.empty())
                throw ConfigError("finetune: split produced no training segments");

            model::ModelWeights<float> w =
                trainer::transfer(src, target, rc.transfer_mode, rc.train.seed);
            json extra{{"finetuned_from",
                        {{"path", ft_from},
                         {"weights_hash", hash_hex(trainer::weights_hash(src.weights))},
                         {"dataset", src.provenance.value("dataset", std::string())}}}};
            std::optional<double> final_acc;
            std::vector<trainer::EpochRecord> history;
            trainer::Checkpoint ckpt =
                run_training(std::move(w), rc, pd, extra, &final_acc, &history);
            trainer::save_checkpoint(ckpt, ft_out);
            trainer::write_history(ft_out + ".history.jsonl", history);
            std::cerr << "checkpoint written to " << ft_out << "\n";
            if (final_acc) std::cout << "accuracy=" << *final_acc << "\n";
        });
    }

    if (ev->parsed()) {
        return run_guarded([&] {
            RunConfig rc = parse_run_config(ev_config_path);
            trainer::Checkpoint ckpt = trainer::load_checkpoint(ev_ckpt);
            PreparedData pd = prepare_data(rc);
            if (pd.split.test.empty()) throw DataError("empty evaluation set");
            trainer::Metrics m = trainer::evaluate(ckpt.weights, pd.split.test);
            std::cout << m.to_json().dump(2) << "\n";
        });
    }

    if (rp->parsed()) {
        return run_guarded([&] {
            if (rp_seeds < 2) throw ConfigError("report: need >= 2 seeds");
            std::vector<trainer::Variant> variants = trainer::paper_variants();
            if (!rp_variants_path.empty()) {
                std::ifstream f(rp_variants_path);
                if (!f) throw ConfigError("cannot open variants file: " + rp_variants_path);
                json j;
                try {
                    f >> j;
                } catch (const json::exception& e) {
                    throw ConfigError(std::string("variants file is not valid JSON: ") + e.what());
                }
                variants.clear();
                for (const auto& vj : j.at("variants")) {
                    reject_unknown(vj, {"id", "embed_dim", "num_layers", "encoder_hidden", "num_heads"},
                                   "variants");
                    variants.push_back({vj.at("id").get<int>(), vj.at("embed_dim").get<size_t>(),
                                        vj.at("num_layers").get<size_t>(),
                                        vj.at("encoder_hidden").get<size_t>(),
                                        vj.at("num_heads").get<size_t>()});
                }
            }

            // Built-in desk-scale task: deterministic synthetic data at both
            // of the study's window geometries.
            data::SynthSpec spec;
            spec.num_classes = 4;
            spec.trials_per_class = 5;
            spec.duration_s = 0.6;
            spec.sample_rate_hz = 1000.0;
            data::Dataset ds = data::synth_generate(spec, 20240042);
            dsp::ChainSpec chain = dsp::ChainSpec::custom({}, {}, 255.0);
            for (auto& t : ds.trials) t = dsp::preprocess_chain(t, chain);

            trainer::StudyTask task;
            task.manifest = &ds.manifest;
            task.trials = &ds.trials;
            task.split = data::SplitSpec{{"1", "2", "3"}, {"4", "5"}};
            task.geometries = {{250.0, 125.0}, {500.0, 250.0}};
            task.train_base.learning_rate = 3e-4;
            task.train_base.epochs = rp_epochs;
            task.train_base.batch_size = 64;
            task.model_base.channels = ds.manifest.channels;
            task.model_base.num_classes = ds.manifest.classes.size();
            task.model_base.dropout_p = 0.1;

            std::vector<uint64_t> seeds;
            for (int i = 0; i < rp_seeds; ++i) seeds.push_back(rp_base_seed + static_cast<uint64_t>(i));
            std::vector<trainer::StudyRow> rows = trainer::variant_study(variants, seeds, task);
            std::string csv = trainer::study_csv(rows);
            if (rp_out.empty()) {
                std::cout << csv;
            } else {
                std::ofstream out(rp_out);
                if (!out) throw LoadError("cannot open for writing: " + rp_out);
                out << csv;
                std::cerr << "report written to " << rp_out << "\n";
            }
        });
    }

    if (vf->parsed()) {
        return run_guarded([&] {
            std::vector<verify::CheckResult> results;
            if (vf_suite == "gradcheck" || vf_suite == "all") {
                auto r = verify::gradcheck_suite();
                results.insert(results.end(), r.begin(), r.end());
            }
            if (vf_suite == "dsp" || vf_suite == "all") {
                auto r1 = verify::mu_law_suite();
                auto r2 = verify::dsp_suite();
                results.insert(results.end(), r1.begin(), r1.end());
                results.insert(results.end(), r2.begin(), r2.end());
            }
            bool ok = true;
            for (const auto& r : results) {
                std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name;
                if (!r.detail.empty()) std::cout << " — " << r.detail;
                std::cout << "\n";
                ok = ok && r.pass;
            }
            if (!ok) throw DataError("verification suite failed");
        });
    }

    return 0;
}
