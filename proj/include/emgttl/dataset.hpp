#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emgttl/common.hpp"
#include "emgttl/dsp.hpp"

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are unsupported");

namespace emgttl::data {

using dsp::SignalTrial;
namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct TrialEntry {
    std::string file;
    std::string subject_id;
    std::string trial_id;
    int class_index = 0;
};

struct DatasetManifest {
    std::string name;
    size_t channels = 0;
    double sample_rate_hz = 0.0;
    std::vector<std::string> classes;  // order defines label indices
    std::vector<TrialEntry> trials;
};

struct SegmentationConfig {
    double window_ms = 500.0;
    double step_ms = 250.0;

    size_t window_samples(double rate_hz) const {
        return static_cast<size_t>(std::llround(window_ms / 1000.0 * rate_hz));
    }
    size_t step_samples(double rate_hz) const {
        return static_cast<size_t>(std::llround(step_ms / 1000.0 * rate_hz));
    }

    // The model needs N = W/C integral; reject bad geometry with the nearest
    // valid window as a corrective suggestion.
    void validate(double rate_hz, size_t channels) const {
        if (window_ms <= 0.0 || step_ms <= 0.0)
            throw ConfigError("segmentation: window_ms and step_ms must be positive");
        if (step_ms > window_ms)
            throw ConfigError("segmentation: step_ms must not exceed window_ms");
        size_t w = window_samples(rate_hz);
        size_t s = step_samples(rate_hz);
        if (w == 0 || s == 0)
            throw ConfigError("segmentation: window/step round to zero samples at this rate");
        if (channels > 0 && w % channels != 0) {
            size_t down = w - (w % channels);
            size_t up = down + channels;
            size_t nearest = (down > 0 && w - down <= up - w) ? down : up;
            std::ostringstream os;
            os << "segmentation: window of " << w << " samples is not divisible by " << channels
               << " channels; nearest valid window is " << nearest << " samples ("
               << nearest * 1000.0 / rate_hz << " ms)";
            throw ConfigError(os.str());
        }
    }
};

// A windowed slice, the model's input unit. X is channel-major C x W.
struct Segment {
    std::vector<float> x;
    size_t channels = 0;
    size_t window = 0;
    int label = 0;
    std::string subject_id;
    std::string trial_id;
    size_t start_sample = 0;
};

struct SplitSpec {
    std::set<std::string> train_trial_ids;
    std::set<std::string> test_trial_ids;

    static SplitSpec preset(const std::string& name) {
        if (name == "db1-paper") return {{"1", "3", "4", "6", "8", "9", "10"}, {"2", "5", "7"}};
        if (name == "db4-paper") return {{"1", "2", "3"}, {"4", "5"}};
        throw ConfigError("unknown split preset '" + name + "' (known: db1-paper, db4-paper)");
    }
};

// ---------------------------------------------------------------------------
// Trial file IO (raw little-endian float32, channel-major, no header)
// ---------------------------------------------------------------------------

inline void write_trial_file(const fs::path& path, const SignalTrial& trial) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open for writing: " + path.string());
    std::vector<float> buf(trial.samples.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(trial.samples[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw LoadError("short write to " + path.string());
}

inline SignalTrial read_trial_file(const fs::path& path, size_t channels, double sample_rate_hz,
                                   const TrialEntry& entry) {
    std::error_code ec;
    auto bytes = fs::file_size(path, ec);
    if (ec)
        throw LoadError("trial file missing: " + path.string() + " (trial " + entry.trial_id +
                        ", subject " + entry.subject_id + ")");
    if (bytes == 0 || bytes % (sizeof(float) * channels) != 0)
        throw LoadError("trial file size " + std::to_string(bytes) + " bytes is not a multiple of " +
                        std::to_string(sizeof(float) * channels) + " (file " + path.string() + ")");
    size_t t = bytes / (sizeof(float) * channels);
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open trial file: " + path.string());
    std::vector<float> buf(channels * t);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    if (!f) throw LoadError("short read from " + path.string());

    SignalTrial trial;
    trial.channels = channels;
    trial.num_samples = t;
    trial.sample_rate_hz = sample_rate_hz;
    trial.subject_id = entry.subject_id;
    trial.trial_id = entry.trial_id;
    trial.label = entry.class_index;
    trial.samples.resize(buf.size());
    for (size_t i = 0; i < buf.size(); ++i) trial.samples[i] = static_cast<double>(buf[i]);
    trial.validate();
    return trial;
}

// ---------------------------------------------------------------------------
// Manifest IO
// ---------------------------------------------------------------------------

namespace detail {

inline void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                                const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw LoadError("unknown key '" + it.key() + "' in " + where);
}

}  // namespace detail

inline DatasetManifest parse_manifest(const json& j, const std::string& origin) {
    if (!j.is_object()) throw LoadError("manifest is not a JSON object: " + origin);
    detail::reject_unknown_keys(j, {"name", "channels", "sample_rate_hz", "classes", "trials"},
                                "manifest " + origin);
    DatasetManifest m;
    try {
        m.name = j.at("name").get<std::string>();
        m.channels = j.at("channels").get<size_t>();
        m.sample_rate_hz = j.at("sample_rate_hz").get<double>();
        m.classes = j.at("classes").get<std::vector<std::string>>();
        for (const auto& tj : j.at("trials")) {
            detail::reject_unknown_keys(tj, {"file", "subject_id", "trial_id", "class"},
                                        "trial entry in " + origin);
            TrialEntry e;
            e.file = tj.at("file").get<std::string>();
            e.subject_id = tj.at("subject_id").get<std::string>();
            e.trial_id = tj.at("trial_id").get<std::string>();
            e.class_index = tj.at("class").get<int>();
            m.trials.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw LoadError("malformed manifest " + origin + ": " + e.what());
    }
    if (m.channels < 1) throw LoadError("manifest " + origin + ": channels must be >= 1");
    if (m.sample_rate_hz <= 0) throw LoadError("manifest " + origin + ": sample_rate_hz must be > 0");
    std::set<std::string> seen;
    for (const auto& e : m.trials) {
        if (e.class_index < 0 || static_cast<size_t>(e.class_index) >= m.classes.size())
            throw LoadError("manifest " + origin + ": trial " + e.trial_id + " of subject " +
                            e.subject_id + " has class index " + std::to_string(e.class_index) +
                            " outside the class list");
        std::string key = e.subject_id + "\x1f" + std::to_string(e.class_index) + "\x1f" + e.trial_id;
        if (!seen.insert(key).second)
            throw LoadError("manifest " + origin + ": duplicate trial id " + e.trial_id +
                            " for subject " + e.subject_id + ", class " +
                            std::to_string(e.class_index));
    }
    return m;
}

inline json manifest_to_json(const DatasetManifest& m) {
    json j;
    j["name"] = m.name;
    j["channels"] = m.channels;
    j["sample_rate_hz"] = m.sample_rate_hz;
    j["classes"] = m.classes;
    j["trials"] = json::array();
    for (const auto& e : m.trials)
        j["trials"].push_back({{"file", e.file},
                               {"subject_id", e.subject_id},
                               {"trial_id", e.trial_id},
                               {"class", e.class_index}});
    return j;
}

inline void save_manifest(const fs::path& path, const DatasetManifest& m) {
    std::ofstream f(path);
    if (!f) throw LoadError("cannot open for writing: " + path.string());
    f << manifest_to_json(m).dump(2) << "\n";
}

struct Dataset {
    DatasetManifest manifest;
    std::vector<SignalTrial> trials;
};

// Parse a manifest and load every referenced trial file. Paths are
// interpreted relative to the manifest's directory.
inline Dataset load_dataset(const fs::path& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw LoadError("cannot open manifest: " + manifest_path.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw LoadError("manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
    }
    Dataset ds;
    ds.manifest = parse_manifest(j, manifest_path.string());
    fs::path base = manifest_path.parent_path();
    for (const auto& e : ds.manifest.trials)
        ds.trials.push_back(
            read_trial_file(base / e.file, ds.manifest.channels, ds.manifest.sample_rate_hz, e));
    return ds;
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

struct SegmentationResult {
    std::vector<Segment> segments;
    bool trial_too_short = false;
};

// k = floor((T - W) / S) + 1 windows, segment i starting at sample i*S.
inline SegmentationResult segment_trial(const SignalTrial& trial, const SegmentationConfig& cfg) {
    cfg.validate(trial.sample_rate_hz, trial.channels);
    size_t w = cfg.window_samples(trial.sample_rate_hz);
    size_t s = cfg.step_samples(trial.sample_rate_hz);
    SegmentationResult out;
    if (trial.num_samples < w) {
        out.trial_too_short = true;
        return out;
    }
    size_t k = (trial.num_samples - w) / s + 1;
    out.segments.reserve(k);
    for (size_t i = 0; i < k; ++i) {
        Segment seg;
        seg.channels = trial.channels;
        seg.window = w;
        seg.label = trial.label;
        seg.subject_id = trial.subject_id;
        seg.trial_id = trial.trial_id;
        seg.start_sample = i * s;
        seg.x.resize(trial.channels * w);
        for (size_t c = 0; c < trial.channels; ++c)
            for (size_t t = 0; t < w; ++t)
                seg.x[c * w + t] = static_cast<float>(trial.at(c, i * s + t));
        out.segments.push_back(std::move(seg));
    }
    return out;
}

struct Split {
    std::vector<Segment> train;
    std::vector<Segment> test;
};

// Split whole trials (never windows), then segment. Trials must already be
// preprocessed; ids listed in the split must exist in the manifest.
inline Split build_split(const DatasetManifest& manifest, const std::vector<SignalTrial>& trials,
                         const SplitSpec& split, const SegmentationConfig& cfg) {
    for (const std::string& id : split.train_trial_ids)
        if (split.test_trial_ids.count(id))
            throw ConfigError("split: trial id '" + id + "' appears in both train and test");
    std::set<std::string> known;
    for (const auto& e : manifest.trials) known.insert(e.trial_id);
    for (const auto& ids : {split.train_trial_ids, split.test_trial_ids})
        for (const std::string& id : ids)
            if (!known.count(id))
                throw ConfigError("split: trial id '" + id + "' does not exist in dataset '" +
                                  manifest.name + "'");

    Split out;
    for (const SignalTrial& trial : trials) {
        std::vector<Segment>* sink = nullptr;
        if (split.train_trial_ids.count(trial.trial_id)) sink = &out.train;
        else if (split.test_trial_ids.count(trial.trial_id)) sink = &out.test;
        if (!sink) continue;
        SegmentationResult r = segment_trial(trial, cfg);
        sink->insert(sink->end(), std::make_move_iterator(r.segments.begin()),
                     std::make_move_iterator(r.segments.end()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic sEMG generator
// ---------------------------------------------------------------------------

struct SynthSpec {
    size_t num_classes = 4;
    size_t subjects = 1;
    size_t trials_per_class = 5;
    double duration_s = 4.0;
    double sample_rate_hz = 2000.0;
    size_t channels = 5;
};

// Deterministic generator: each class gets its own spectral peaks and
// per-channel amplitude pattern; trials of a class share those but differ
// in phase, jitter and noise. Output is in physical-like units.
inline Dataset synth_generate(const SynthSpec& spec, uint64_t seed) {
    if (spec.num_classes < 1 || spec.subjects < 1 || spec.trials_per_class < 1 ||
        spec.channels < 1 || spec.duration_s <= 0 || spec.sample_rate_hz <= 0)
        throw ConfigError("synth_generate: all counts must be positive");

    Dataset ds;
    ds.manifest.name = "synthetic";
    ds.manifest.channels = spec.channels;
    ds.manifest.sample_rate_hz = spec.sample_rate_hz;
    for (size_t c = 0; c < spec.num_classes; ++c)
        ds.manifest.classes.push_back("class" + std::to_string(c));

    size_t t_samples = static_cast<size_t>(std::llround(spec.duration_s * spec.sample_rate_hz));
    double nyquist = spec.sample_rate_hz / 2.0;

    for (size_t s = 1; s <= spec.subjects; ++s) {
        for (size_t c = 0; c < spec.num_classes; ++c) {
            // Class-level character, shared by all trials of the class: peak
            // frequencies, harmonic mix, envelope rate, and a per-channel
            // tone amplitude pattern. The pattern scales the tones only, so
            // it survives the per-channel rescale as a tone-to-noise
            // signature. Trials differ in phases, jitter, gain and noise.
            Rng class_rng(derive_seed(derive_seed(seed, 0xC1A55ULL + c), s));
            double f_base = 20.0 + class_rng.uniform(0.0, 4.0) + 16.0 * static_cast<double>(c);
            while (f_base > 0.75 * nyquist) f_base *= 0.5;
            double f_ratio = 1.9 + class_rng.uniform(0.0, 0.4);
            double harm2 = class_rng.uniform(0.3, 0.7);
            double env_hz = class_rng.uniform(0.5, 1.5);
            std::vector<double> chan_amp(spec.channels);
            for (size_t ch = 0; ch < spec.channels; ++ch) chan_amp[ch] = class_rng.uniform(0.35, 1.0);

            for (size_t tr = 1; tr <= spec.trials_per_class; ++tr) {
                Rng rng(derive_seed(derive_seed(derive_seed(seed, s), c + 1), tr));
                double jitter = rng.uniform(-0.75, 0.75);
                double f1 = f_base + jitter;
                double f2 = std::min(f1 * f_ratio, 0.9 * nyquist);
                double gain_mv = rng.uniform(0.3, 3.0);

                SignalTrial trial;
                trial.channels = spec.channels;
                trial.num_samples = t_samples;
                trial.sample_rate_hz = spec.sample_rate_hz;
                trial.subject_id = "s" + std::to_string(s);
                trial.trial_id = std::to_string(tr);
                trial.label = static_cast<int>(c);
                trial.samples.resize(spec.channels * t_samples);

                for (size_t ch = 0; ch < spec.channels; ++ch) {
                    double ph1 = rng.uniform(0.0, 2.0 * M_PI);
                    double ph2 = rng.uniform(0.0, 2.0 * M_PI);
                    double phe = rng.uniform(0.0, 2.0 * M_PI);
                    double lp = 0.0;  // one-pole state for band-limited noise
                    for (size_t i = 0; i < t_samples; ++i) {
                        double t = static_cast<double>(i) / spec.sample_rate_hz;
                        double env = 0.75 + 0.25 * std::sin(2.0 * M_PI * env_hz * t + phe);
                        double tone = std::sin(2.0 * M_PI * f1 * t + ph1) +
                                      harm2 * std::sin(2.0 * M_PI * f2 * t + ph2);
                        lp = 0.7 * lp + 0.3 * rng.normal();
                        double v = gain_mv * (chan_amp[ch] * env * tone + 0.25 * lp);
                        trial.samples[ch * t_samples + i] = v;
                    }
                }

                TrialEntry e;
                e.file = "trials/" + trial.subject_id + "_c" + std::to_string(c) + "_t" +
                         trial.trial_id + ".f32";
                e.subject_id = trial.subject_id;
                e.trial_id = trial.trial_id;
                e.class_index = static_cast<int>(c);
                ds.manifest.trials.push_back(e);
                ds.trials.push_back(std::move(trial));
            }
        }
    }
    return ds;
}

// Write a generated dataset as manifest + raw trial files.
inline void save_dataset(const fs::path& dir, const Dataset& ds) {
    fs::create_directories(dir / "trials");
    for (size_t i = 0; i < ds.trials.size(); ++i)
        write_trial_file(dir / ds.manifest.trials[i].file, ds.trials[i]);
    save_manifest(dir / "manifest.json", ds.manifest);
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct Batch {
    std::vector<float> x;  // [B, C, W]
    std::vector<int> y;
    size_t size = 0;
    size_t channels = 0;
    size_t window = 0;
};

// Deterministic permutation from the seed; the final partial batch is
// emitted. Pass nullopt to preserve input order.
inline std::vector<Batch> batches(const std::vector<Segment>& segments, size_t batch_size,
                                  std::optional<uint64_t> shuffle_seed) {
    if (batch_size < 1) throw ConfigError("batches: batch_size must be >= 1");
    std::vector<Batch> out;
    if (segments.empty()) return out;

    std::vector<size_t> order(segments.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (shuffle_seed) shuffle_inplace(order, *shuffle_seed);

    size_t c = segments[0].channels;
    size_t w = segments[0].window;
    for (size_t pos = 0; pos < order.size(); pos += batch_size) {
        size_t b = std::min(batch_size, order.size() - pos);
        Batch batch;
        batch.size = b;
        batch.channels = c;
        batch.window = w;
        batch.x.resize(b * c * w);
        batch.y.resize(b);
        for (size_t i = 0; i < b; ++i) {
            const Segment& seg = segments[order[pos + i]];
            if (seg.channels != c || seg.window != w)
                throw ShapeError("batches: segment geometry varies within the list");
            std::copy(seg.x.begin(), seg.x.end(), batch.x.begin() + static_cast<long>(i * c * w));
            batch.y[i] = seg.label;
        }
        out.push_back(std::move(batch));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Segment archive (optional cache)
// ---------------------------------------------------------------------------
// 16-byte header: magic "EMGS", version u16, C u16, W u32, count u32;
// then count C*W float32 matrices, then count u32 labels.

inline void save_segment_archive(const fs::path& path, const std::vector<Segment>& segments) {
    if (segments.empty()) throw UsageError("save_segment_archive: empty segment list");
    uint16_t version = 1;
    uint16_t c = static_cast<uint16_t>(segments[0].channels);
    uint32_t w = static_cast<uint32_t>(segments[0].window);
    uint32_t count = static_cast<uint32_t>(segments.size());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open for writing: " + path.string());
    f.write("EMGS", 4);
    f.write(reinterpret_cast<const char*>(&version), 2);
    f.write(reinterpret_cast<const char*>(&c), 2);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(&count), 4);
    for (const Segment& s : segments) {
        if (s.channels != c || s.window != w)
            throw ShapeError("save_segment_archive: segment geometry varies within the list");
        f.write(reinterpret_cast<const char*>(s.x.data()),
                static_cast<std::streamsize>(s.x.size() * sizeof(float)));
    }
    for (const Segment& s : segments) {
        uint32_t label = static_cast<uint32_t>(s.label);
        f.write(reinterpret_cast<const char*>(&label), 4);
    }
    if (!f) throw LoadError("short write to " + path.string());
}

inline std::vector<Segment> load_segment_archive(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open segment archive: " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "EMGS", 4) != 0)
        throw LoadError("bad magic in segment archive " + path.string() + " at byte offset 0");
    uint16_t version = 0, c = 0;
    uint32_t w = 0, count = 0;
    f.read(reinterpret_cast<char*>(&version), 2);
    f.read(reinterpret_cast<char*>(&c), 2);
    f.read(reinterpret_cast<char*>(&w), 4);
    f.read(reinterpret_cast<char*>(&count), 4);
    if (!f) throw LoadError("truncated segment archive header in " + path.string());
    if (version != 1)
        throw LoadError("segment archive version " + std::to_string(version) +
                        " not supported (expected 1) in " + path.string());
    std::vector<Segment> out(count);
    for (uint32_t i = 0; i < count; ++i) {
        Segment& s = out[i];
        s.channels = c;
        s.window = w;
        s.x.resize(static_cast<size_t>(c) * w);
        f.read(reinterpret_cast<char*>(s.x.data()),
               static_cast<std::streamsize>(s.x.size() * sizeof(float)));
        if (!f)
            throw LoadError("truncated segment payload in " + path.string() + " at byte offset " +
                            std::to_string(16 + static_cast<size_t>(i) * c * w * sizeof(float)));
    }
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t label = 0;
        f.read(reinterpret_cast<char*>(&label), 4);
        if (!f)
            throw LoadError("truncated label block in " + path.string() + " at byte offset " +
                            std::to_string(16 + static_cast<size_t>(count) * c * w * sizeof(float) +
                                           static_cast<size_t>(i) * 4));
        out[i].label = static_cast<int>(label);
    }
    return out;
}

}  // namespace emgttl::data
