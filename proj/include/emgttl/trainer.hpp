#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "emgttl/common.hpp"
#include "emgttl/dataset.hpp"
#include "emgttl/model.hpp"

namespace emgttl::trainer {

using json = nlohmann::json;
using model::ModelConfig;
using model::ModelWeights;
using model::Parameter;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 0.0;  // mandatory; no silent default enters reports
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.00055;
    double epsilon = 1e-8;
    size_t batch_size = 512;
    size_t epochs = 10;
    uint64_t seed = 0;
    int precision = 32;  // 32 for training, 64 for verification runs

    void validate() const {
        if (learning_rate <= 0.0)
            throw ConfigError("train: learning_rate must be set to a positive value");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw ConfigError("train: betas must lie in [0, 1)");
        if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be non-negative");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (precision != 32 && precision != 64)
            throw ConfigError("train: precision must be 32 or 64");
    }
};

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m;  // first moments, canonical parameter order
    std::vector<std::vector<T>> v;  // second moments
    size_t t = 0;

    template <typename U>
    static AdamState init(const ModelWeights<U>& w) {
        AdamState st;
        model::for_each_param(w, [&](const Parameter<U>& p) {
            st.m.emplace_back(p.value.size(), T(0));
            st.v.emplace_back(p.value.size(), T(0));
        });
        return st;
    }
};

// One bias-corrected step. Weight decay is applied directly to the weights
// (decoupled), not through the gradient.
template <typename T>
void adam_step(ModelWeights<T>& w, AdamState<T>& st, const TrainConfig& cfg) {
    st.t += 1;
    double b1 = cfg.beta1, b2 = cfg.beta2;
    double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
    double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
    size_t idx = 0;
    model::for_each_param(w, [&](Parameter<T>& p) {
        size_t i = idx++;
        if (!p.trainable) return;
        std::vector<T>& m = st.m[i];
        std::vector<T>& v = st.v[i];
        T* x = p.value.ptr();
        for (size_t j = 0; j < p.grad.size(); ++j) {
            double g = static_cast<double>(p.grad[j]);
            if (!std::isfinite(g))
                throw TrainError("non-finite gradient in parameter '" + p.name + "' at step " +
                                 std::to_string(st.t));
            if (cfg.weight_decay > 0.0)
                x[j] = static_cast<T>(static_cast<double>(x[j]) *
                                      (1.0 - cfg.learning_rate * cfg.weight_decay));
            double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * g;
            double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * g * g;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            double update = cfg.learning_rate * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.epsilon);
            x[j] = static_cast<T>(static_cast<double>(x[j]) - update);
        }
    });
}

// ---------------------------------------------------------------------------
// Metrics / evaluation
// ---------------------------------------------------------------------------

struct Metrics {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    size_t num_classes = 0;
    std::vector<size_t> confusion;  // K x K, row = true class, col = predicted
    std::vector<double> per_class_recall;

    size_t total() const {
        size_t n = 0;
        for (size_t v : confusion) n += v;
        return n;
    }

    json to_json() const {
        json j;
        j["accuracy"] = accuracy;
        j["mean_loss"] = mean_loss;
        j["num_classes"] = num_classes;
        j["per_class_recall"] = per_class_recall;
        j["confusion"] = json::array();
        for (size_t r = 0; r < num_classes; ++r) {
            json row = json::array();
            for (size_t c = 0; c < num_classes; ++c) row.push_back(confusion[r * num_classes + c]);
            j["confusion"].push_back(row);
        }
        return j;
    }
};

// Argmax with the lowest class index winning ties.
template <typename T>
int argmax_class(const T* row, size_t k) {
    int best = 0;
    for (size_t j = 1; j < k; ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
    return best;
}

namespace detail {

template <typename T>
void eval_range(const ModelWeights<T>& w, const std::vector<data::Segment>& segments, size_t lo,
                size_t hi, size_t batch_size, std::vector<size_t>& confusion, double& loss_sum,
                size_t& loss_count) {
    size_t k = w.config.num_classes;
    for (size_t pos = lo; pos < hi; pos += batch_size) {
        size_t b = std::min(batch_size, hi - pos);
        ad::Tensor<T> x = ad::Tensor<T>::zeros({b, w.config.channels, w.config.window});
        std::vector<int> labels(b);
        for (size_t i = 0; i < b; ++i) {
            const data::Segment& s = segments[pos + i];
            for (size_t j = 0; j < s.x.size(); ++j)
                (*x.data)[i * s.x.size() + j] = static_cast<T>(s.x[j]);
            labels[i] = s.label;
        }
        ad::Tensor<T> logits = model::forward(w, x, false, 0);
        ad::Tensor<T> loss = ad::cross_entropy(logits, labels);
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(b);
        loss_count += b;
        for (size_t i = 0; i < b; ++i) {
            int pred = argmax_class(logits.ptr() + i * k, k);
            confusion[static_cast<size_t>(labels[i]) * k + static_cast<size_t>(pred)] += 1;
        }
    }
}

}  // namespace detail

// Inference-mode evaluation. Honors EMGTTL_THREADS: shards the segment list
// and merges confusion matrices additively.
template <typename T>
Metrics evaluate(const ModelWeights<T>& w, const std::vector<data::Segment>& segments,
                 size_t batch_size = 256) {
    if (segments.empty()) throw UsageError("evaluate: empty evaluation set");
    size_t k = w.config.num_classes;
    for (const data::Segment& s : segments)
        if (s.label < 0 || static_cast<size_t>(s.label) >= k)
            throw DataError("evaluate: segment label " + std::to_string(s.label) +
                            " outside model classes");

    int workers = std::min<int>(env_thread_cap(), static_cast<int>(segments.size()));
    std::vector<std::vector<size_t>> conf(static_cast<size_t>(workers),
                                          std::vector<size_t>(k * k, 0));
    std::vector<double> loss_sums(static_cast<size_t>(workers), 0.0);
    std::vector<size_t> loss_counts(static_cast<size_t>(workers), 0);

    if (workers <= 1) {
        detail::eval_range(w, segments, 0, segments.size(), batch_size, conf[0], loss_sums[0],
                           loss_counts[0]);
    } else {
        std::vector<std::thread> threads;
        size_t chunk = (segments.size() + static_cast<size_t>(workers) - 1) / static_cast<size_t>(workers);
        for (int t = 0; t < workers; ++t) {
            size_t lo = static_cast<size_t>(t) * chunk;
            size_t hi = std::min(segments.size(), lo + chunk);
            if (lo >= hi) break;
            threads.emplace_back([&, t, lo, hi] {
                detail::eval_range(w, segments, lo, hi, batch_size, conf[static_cast<size_t>(t)],
                                   loss_sums[static_cast<size_t>(t)], loss_counts[static_cast<size_t>(t)]);
            });
        }
        for (auto& th : threads) th.join();
    }

    Metrics out;
    out.num_classes = k;
    out.confusion.assign(k * k, 0);
    double loss_sum = 0.0;
    size_t count = 0;
    for (int t = 0; t < workers; ++t) {
        for (size_t i = 0; i < k * k; ++i) out.confusion[i] += conf[static_cast<size_t>(t)][i];
        loss_sum += loss_sums[static_cast<size_t>(t)];
        count += loss_counts[static_cast<size_t>(t)];
    }
    out.mean_loss = loss_sum / static_cast<double>(count);
    size_t correct = 0;
    for (size_t c = 0; c < k; ++c) correct += out.confusion[c * k + c];
    out.accuracy = static_cast<double>(correct) / static_cast<double>(segments.size());
    out.per_class_recall.assign(k, 0.0);
    for (size_t c = 0; c < k; ++c) {
        size_t support = 0;
        for (size_t j = 0; j < k; ++j) support += out.confusion[c * k + j];
        out.per_class_recall[c] =
            support ? static_cast<double>(out.confusion[c * k + c]) / static_cast<double>(support)
                    : 0.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline json model_config_to_json(const ModelConfig& c) {
    return json{{"channels", c.channels},
                {"window", c.window},
                {"embed_dim", c.embed_dim},
                {"num_layers", c.num_layers},
                {"num_heads", c.num_heads},
                {"encoder_hidden", c.encoder_hidden},
                {"head_hidden1", c.head_hidden1},
                {"head_hidden2", c.head_hidden2},
                {"num_classes", c.num_classes},
                {"dropout_p", c.dropout_p},
                {"encoder_two_hidden", c.encoder_two_hidden},
                {"positional", c.positional == model::Positional::learned ? "learned" : "sinusoid"}};
}

inline ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.channels = j.at("channels").get<size_t>();
    c.window = j.at("window").get<size_t>();
    c.embed_dim = j.at("embed_dim").get<size_t>();
    c.num_layers = j.at("num_layers").get<size_t>();
    c.num_heads = j.at("num_heads").get<size_t>();
    c.encoder_hidden = j.at("encoder_hidden").get<size_t>();
    c.head_hidden1 = j.at("head_hidden1").get<size_t>();
    c.head_hidden2 = j.at("head_hidden2").get<size_t>();
    c.num_classes = j.at("num_classes").get<size_t>();
    c.dropout_p = j.at("dropout_p").get<double>();
    c.encoder_two_hidden = j.at("encoder_two_hidden").get<bool>();
    c.positional = j.at("positional").get<std::string>() == "sinusoid"
                       ? model::Positional::sinusoid
                       : model::Positional::learned;
    return c;
}

// Optimizer moments captured alongside the weights (resume support).
struct AdamSnapshot {
    size_t t = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
};

struct Checkpoint {
    uint16_t version = 1;
    ModelConfig config;
    ModelWeights<float> weights;
    std::optional<AdamSnapshot> optimizer;
    json provenance = json::object();
};

inline uint64_t weights_hash(const ModelWeights<float>& w) {
    uint64_t h = 0xcbf29ce484222325ULL;
    model::for_each_param(w, [&](const Parameter<float>& p) {
        h = fnv1a64(p.value.ptr(), p.value.size() * sizeof(float), h);
    });
    return h;
}

// Hash of everything except the head, for transfer bit-exactness checks.
inline uint64_t encoder_hash(const ModelWeights<float>& w) {
    uint64_t h = 0xcbf29ce484222325ULL;
    model::for_each_param(w, [&](const Parameter<float>& p) {
        if (!model::is_head_param(p.name))
            h = fnv1a64(p.value.ptr(), p.value.size() * sizeof(float), h);
    });
    return h;
}

// Binary layout: "EMGT", version u16, header length u32, UTF-8 JSON header
// (config + provenance + tensor directory), then raw little-endian float32
// payloads in directory order.
inline void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    json header;
    header["config"] = model_config_to_json(ckpt.config);
    header["provenance"] = ckpt.provenance;
    header["tensors"] = json::array();
    size_t offset = 0;
    auto add_entry = [&](const std::string& name, const std::vector<size_t>& shape, size_t count) {
        header["tensors"].push_back({{"name", name}, {"shape", shape}, {"offset", offset}});
        offset += count * sizeof(float);
    };
    model::for_each_param(ckpt.weights, [&](const Parameter<float>& p) {
        add_entry(p.name, p.value.shape, p.value.size());
    });
    if (ckpt.optimizer) {
        header["optimizer_step"] = ckpt.optimizer->t;
        size_t i = 0;
        model::for_each_param(ckpt.weights, [&](const Parameter<float>& p) {
            add_entry("adam.m." + p.name, {ckpt.optimizer->m[i].size()}, ckpt.optimizer->m[i].size());
            add_entry("adam.v." + p.name, {ckpt.optimizer->v[i].size()}, ckpt.optimizer->v[i].size());
            ++i;
        });
    }
    std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open for writing: " + path.string());
    f.write("EMGT", 4);
    uint16_t version = ckpt.version;
    f.write(reinterpret_cast<const char*>(&version), 2);
    uint32_t hlen = static_cast<uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    model::for_each_param(ckpt.weights, [&](const Parameter<float>& p) {
        f.write(reinterpret_cast<const char*>(p.value.ptr()),
                static_cast<std::streamsize>(p.value.size() * sizeof(float)));
    });
    if (ckpt.optimizer) {
        size_t i = 0;
        model::for_each_param(ckpt.weights, [&](const Parameter<float>&) {
            f.write(reinterpret_cast<const char*>(ckpt.optimizer->m[i].data()),
                    static_cast<std::streamsize>(ckpt.optimizer->m[i].size() * sizeof(float)));
            f.write(reinterpret_cast<const char*>(ckpt.optimizer->v[i].data()),
                    static_cast<std::streamsize>(ckpt.optimizer->v[i].size() * sizeof(float)));
            ++i;
        });
    }
    if (!f) throw LoadError("short write to " + path.string());
}

inline Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open checkpoint: " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "EMGT", 4) != 0)
        throw LoadError("bad magic in checkpoint " + path.string() + " at byte offset 0");
    uint16_t version = 0;
    f.read(reinterpret_cast<char*>(&version), 2);
    if (!f) throw LoadError("truncated checkpoint " + path.string() + " at byte offset 4");
    if (version != 1)
        throw LoadError("checkpoint version " + std::to_string(version) +
                        " not supported by this build (expected 1): " + path.string());
    uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 4);
    if (!f) throw LoadError("truncated checkpoint " + path.string() + " at byte offset 6");
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f)
        throw LoadError("truncated checkpoint header in " + path.string() + " at byte offset 10");

    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw LoadError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }

    Checkpoint ckpt;
    ckpt.version = version;
    try {
        ckpt.config = model_config_from_json(header.at("config"));
        ckpt.provenance = header.value("provenance", json::object());
    } catch (const json::exception& e) {
        throw LoadError("checkpoint header missing fields in " + path.string() + ": " + e.what());
    }
    ckpt.weights = model::init_weights<float>(ckpt.config, 0);

    size_t payload_base = 10 + hlen;
    std::vector<const json*> dir;
    for (const auto& tj : header.at("tensors")) dir.push_back(&tj);
    size_t i = 0;
    model::for_each_param(ckpt.weights, [&](Parameter<float>& p) {
        if (i >= dir.size())
            throw LoadError("checkpoint tensor directory too short in " + path.string());
        const json& tj = *dir[i];
        std::string name = tj.at("name").get<std::string>();
        std::vector<size_t> shape = tj.at("shape").get<std::vector<size_t>>();
        if (name != p.name || shape != p.value.shape)
            throw LoadError("checkpoint tensor mismatch at '" + name + "' (expected '" + p.name +
                            "' " + ad::shape_str(p.value.shape) + ") in " + path.string());
        size_t offset = tj.at("offset").get<size_t>();
        f.read(reinterpret_cast<char*>(p.value.ptr()),
               static_cast<std::streamsize>(p.value.size() * sizeof(float)));
        if (!f)
            throw LoadError("truncated tensor payload '" + name + "' in " + path.string() +
                            " at byte offset " + std::to_string(payload_base + offset));
        ++i;
    });
    if (header.contains("optimizer_step")) {
        AdamSnapshot snap;
        snap.t = header.at("optimizer_step").get<size_t>();
        model::for_each_param(ckpt.weights, [&](const Parameter<float>& p) {
            for (const char* kind : {"m", "v"}) {
                if (i >= dir.size())
                    throw LoadError("checkpoint optimizer directory too short in " + path.string());
                const json& tj = *dir[i];
                std::string expect = std::string("adam.") + kind + "." + p.name;
                if (tj.at("name").get<std::string>() != expect)
                    throw LoadError("checkpoint optimizer tensor mismatch (expected '" + expect +
                                    "') in " + path.string());
                std::vector<float> buf(p.value.size());
                f.read(reinterpret_cast<char*>(buf.data()),
                       static_cast<std::streamsize>(buf.size() * sizeof(float)));
                if (!f)
                    throw LoadError("truncated optimizer payload '" + expect + "' in " +
                                    path.string() + " at byte offset " +
                                    std::to_string(payload_base +
                                                   tj.at("offset").get<size_t>()));
                (kind[0] == 'm' ? snap.m : snap.v).push_back(std::move(buf));
                ++i;
            }
        });
        ckpt.optimizer = std::move(snap);
    }
    if (i != dir.size())
        throw LoadError("checkpoint tensor directory has " + std::to_string(dir.size()) +
                        " entries, model expects " + std::to_string(i) + ": " + path.string());
    return ckpt;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
    size_t epoch = 0;
    double train_loss = 0.0;
    std::optional<double> eval_accuracy;
};

inline void write_history(const fs::path& path, const std::vector<EpochRecord>& history) {
    std::ofstream f(path);
    if (!f) throw LoadError("cannot open for writing: " + path.string());
    for (const EpochRecord& r : history) {
        json j{{"epoch", r.epoch}, {"train_loss", r.train_loss}};
        if (r.eval_accuracy) j["eval_accuracy"] = *r.eval_accuracy;
        f << j.dump() << "\n";
    }
}

template <typename T>
struct TrainResult {
    ModelWeights<T> weights;                 // final-epoch weights
    std::optional<ModelWeights<T>> best;     // best-eval-epoch weights, when eval ran
    std::optional<double> best_accuracy;
    std::vector<EpochRecord> history;
    AdamState<T> optimizer;                  // final optimizer state
};

inline AdamSnapshot snapshot_optimizer(const AdamState<float>& st) {
    AdamSnapshot snap;
    snap.t = st.t;
    snap.m = st.m;
    snap.v = st.v;
    return snap;
}

template <typename T>
ModelWeights<T> clone_weights(const ModelWeights<T>& w) {
    ModelWeights<T> out = w;
    model::for_each_param(out, [&](Parameter<T>& p) { p.value = p.value.clone(); });
    return out;
}

template <typename To, typename From>
ModelWeights<To> weights_cast(const ModelWeights<From>& w) {
    ModelWeights<To> out = model::init_weights<To>(w.config, 0);
    std::vector<const Parameter<From>*> src;
    model::for_each_param(w, [&](const Parameter<From>& p) { src.push_back(&p); });
    size_t i = 0;
    model::for_each_param(out, [&](Parameter<To>& p) {
        const Parameter<From>& s = *src[i++];
        p.trainable = s.trainable;
        for (size_t j = 0; j < p.value.size(); ++j)
            (*p.value.data)[j] = static_cast<To>((*s.value.data)[j]);
    });
    return out;
}

// Epoch loop: shuffle -> batches -> forward -> cross-entropy -> backward ->
// adam. Evaluates once per epoch when an eval set is provided. Bit-
// deterministic in cfg.seed in the default single-context mode.
template <typename T>
TrainResult<T> train(ModelWeights<T> weights, const std::vector<data::Segment>& train_segments,
                     const std::vector<data::Segment>& eval_segments, const TrainConfig& cfg) {
    cfg.validate();
    const ModelConfig& mc = weights.config;
    if (train_segments.empty()) throw ConfigError("train: empty training set");
    for (const data::Segment& s : train_segments) {
        if (s.channels != mc.channels || s.window != mc.window)
            throw ConfigError("train: segment geometry " + std::to_string(s.channels) + "x" +
                              std::to_string(s.window) + " does not match model " +
                              std::to_string(mc.channels) + "x" + std::to_string(mc.window));
        if (s.label < 0 || static_cast<size_t>(s.label) >= mc.num_classes)
            throw ConfigError("train: segment label " + std::to_string(s.label) +
                              " outside model classes (K = " + std::to_string(mc.num_classes) + ")");
    }

    AdamState<T> st = AdamState<T>::template init<T>(weights);
    TrainResult<T> result;
    result.weights = weights;  // shares storage; updated in place
    uint64_t step_counter = 0;

    for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        uint64_t epoch_seed = derive_seed(cfg.seed, 0xB000 + epoch);
        std::vector<data::Batch> bs = data::batches(train_segments, cfg.batch_size, epoch_seed);
        double loss_sum = 0.0;
        size_t seg_count = 0;
        for (const data::Batch& batch : bs) {
            ad::Tape<T> tape;
            ModelWeights<T> bound = model::bind(tape, weights);
            ad::Tensor<T> x =
                model::batch_tensor<T>(batch.x, batch.size, batch.channels, batch.window);
            ad::Tensor<T> logits =
                model::forward(bound, x, true, derive_seed(cfg.seed, 0xD40 + step_counter));
            ad::Tensor<T> loss = ad::cross_entropy(logits, batch.y);
            tape.backward(loss);
            model::collect_grads(tape, bound, weights);
            adam_step(weights, st, cfg);
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size);
            seg_count += batch.size;
            ++step_counter;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(seg_count);
        if (!eval_segments.empty()) {
            Metrics m = evaluate(weights, eval_segments);
            rec.eval_accuracy = m.accuracy;
            if (!result.best_accuracy || m.accuracy > *result.best_accuracy) {
                result.best_accuracy = m.accuracy;
                result.best = clone_weights(weights);
            }
        }
        result.history.push_back(rec);
    }
    result.optimizer = std::move(st);
    return result;
}

// ---------------------------------------------------------------------------
// Transfer learning
// ---------------------------------------------------------------------------

enum class TransferMode { head_only_reinit, freeze_encoder };

inline TransferMode transfer_mode_from_string(const std::string& s) {
    if (s == "head-only-reinit") return TransferMode::head_only_reinit;
    if (s == "freeze-encoder") return TransferMode::freeze_encoder;
    throw ConfigError("unknown transfer mode '" + s +
                      "' (known: head-only-reinit, freeze-encoder)");
}

// Geometry must match exactly; no silent interpolation. A window mismatch
// is reported against pos_embed (E_pos), whose shape depends on N.
inline void check_transfer_geometry(const ModelConfig& src, const ModelConfig& dst) {
    std::vector<std::string> bad;
    if (src.channels != dst.channels) bad.push_back("channels");
    if (src.window != dst.window) bad.push_back("window (pos_embed / E_pos row count N+1 differs)");
    if (src.embed_dim != dst.embed_dim) bad.push_back("embed_dim");
    if (src.num_layers != dst.num_layers) bad.push_back("num_layers");
    if (src.num_heads != dst.num_heads) bad.push_back("num_heads");
    if (src.encoder_hidden != dst.encoder_hidden) bad.push_back("encoder_hidden");
    if (src.encoder_two_hidden != dst.encoder_two_hidden) bad.push_back("encoder_two_hidden");
    if (src.head_hidden1 != dst.head_hidden1) bad.push_back("head_hidden1");
    if (src.head_hidden2 != dst.head_hidden2) bad.push_back("head_hidden2");
    if (!bad.empty()) {
        std::ostringstream os;
        os << "transfer: geometry mismatch between source and target: ";
        for (size_t i = 0; i < bad.size(); ++i) os << (i ? ", " : "") << bad[i];
        throw TransferError(os.str());
    }
}

// Copy every non-head tensor bit-exactly from the checkpoint; re-initialize
// the classification head for the target class count. freeze_encoder marks
// the copied tensors non-trainable.
inline ModelWeights<float> transfer(const Checkpoint& pretrained, const ModelConfig& target,
                                    TransferMode mode, uint64_t head_seed = 0) {
    check_transfer_geometry(pretrained.config, target);

    ModelWeights<float> out = model::init_weights<float>(target, head_seed);
    std::vector<const Parameter<float>*> src;
    model::for_each_param(pretrained.weights,
                          [&](const Parameter<float>& p) { src.push_back(&p); });
    size_t i = 0;
    model::for_each_param(out, [&](Parameter<float>& p) {
        const Parameter<float>& s = *src[i++];
        if (model::is_head_param(p.name)) {
            if (mode == TransferMode::freeze_encoder) p.trainable = true;
            return;  // keep the fresh head init
        }
        if (s.value.shape != p.value.shape)
            throw TransferError("transfer: tensor '" + p.name + "' shape mismatch");
        std::copy(s.value.data->begin(), s.value.data->end(), p.value.data->begin());
        if (mode == TransferMode::freeze_encoder) p.trainable = false;
    });
    return out;
}

inline ModelWeights<float> transfer(const Checkpoint& pretrained, size_t new_num_classes,
                                    TransferMode mode, uint64_t head_seed = 0) {
    ModelConfig target = pretrained.config;
    target.num_classes = new_num_classes;
    return transfer(pretrained, target, mode, head_seed);
}

// ---------------------------------------------------------------------------
// Variant study (error-bar report)
// ---------------------------------------------------------------------------

struct Variant {
    int id = 0;
    size_t embed_dim = 64;
    size_t num_layers = 3;
    size_t encoder_hidden = 256;
    size_t num_heads = 8;
};

// The four architecture variants examined by the study.
inline std::vector<Variant> paper_variants() {
    return {{1, 64, 3, 256, 8}, {2, 72, 4, 512, 12}, {3, 128, 6, 256, 16}, {4, 128, 6, 512, 32}};
}

struct StudyTask {
    const data::DatasetManifest* manifest = nullptr;
    const std::vector<dsp::SignalTrial>* trials = nullptr;  // preprocessed
    data::SplitSpec split;
    std::vector<data::SegmentationConfig> geometries;
    TrainConfig train_base;
    ModelConfig model_base;  // channels / classes / head sizes; variant overrides the rest
};

struct StudyRow {
    int variant_id = 0;
    double window_ms = 0.0;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
    size_t param_count = 0;
};

// Trains every (variant, geometry) cell over all seeds and reports
// mean +/- sample std of test accuracy. Rows follow input variant order.
inline std::vector<StudyRow> variant_study(const std::vector<Variant>& variants,
                                           const std::vector<uint64_t>& seeds,
                                           const StudyTask& task) {
    if (seeds.size() < 2) throw ConfigError("variant_study: need >= 2 seeds");
    if (variants.empty()) throw ConfigError("variant_study: empty variant list");
    if (task.geometries.empty()) throw ConfigError("variant_study: no window geometries");

    // validate every variant before any training runs
    for (const Variant& v : variants) {
        for (const data::SegmentationConfig& g : task.geometries) {
            ModelConfig mc = task.model_base;
            mc.embed_dim = v.embed_dim;
            mc.num_layers = v.num_layers;
            mc.encoder_hidden = v.encoder_hidden;
            mc.num_heads = v.num_heads;
            mc.window = g.window_samples(task.manifest->sample_rate_hz);
            mc.validate();
        }
    }

    std::vector<StudyRow> rows;
    for (const Variant& v : variants) {
        for (const data::SegmentationConfig& g : task.geometries) {
            data::Split split = data::build_split(*task.manifest, *task.trials, task.split, g);
            ModelConfig mc = task.model_base;
            mc.embed_dim = v.embed_dim;
            mc.num_layers = v.num_layers;
            mc.encoder_hidden = v.encoder_hidden;
            mc.num_heads = v.num_heads;
            mc.window = g.window_samples(task.manifest->sample_rate_hz);

            std::vector<double> accs;
            for (uint64_t seed : seeds) {
                TrainConfig tc = task.train_base;
                tc.seed = seed;
                ModelWeights<float> w = model::init_weights<float>(mc, seed);
                TrainResult<float> r = train(std::move(w), split.train, {}, tc);
                Metrics m = evaluate(r.weights, split.test);
                accs.push_back(m.accuracy);
            }
            double mean = 0.0;
            for (double a : accs) mean += a;
            mean /= static_cast<double>(accs.size());
            double var = 0.0;
            for (double a : accs) var += (a - mean) * (a - mean);
            var /= static_cast<double>(accs.size() - 1);

            StudyRow row;
            row.variant_id = v.id;
            row.window_ms = g.window_ms;
            row.mean_accuracy = mean;
            row.std_accuracy = std::sqrt(var);
            row.param_count = model::param_count(mc);
            rows.push_back(row);
        }
    }
    return rows;
}

inline std::string study_csv(const std::vector<StudyRow>& rows) {
    std::ostringstream os;
    os << "variant_id,window_ms,mean_accuracy,std_accuracy,param_count\n";
    for (const StudyRow& r : rows)
        os << r.variant_id << "," << r.window_ms << "," << r.mean_accuracy << ","
           << r.std_accuracy << "," << r.param_count << "\n";
    return os.str();
}

}  // namespace emgttl::trainer
