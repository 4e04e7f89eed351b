#pragma once

#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "emgttl/common.hpp"
#include "emgttl/dsp.hpp"
#include "emgttl/model.hpp"
#include "emgttl/tensor.hpp"

namespace emgttl::verify {

struct CheckResult {
    std::string name;
    bool pass = false;
    double metric = 0.0;  // whatever the check measures (rel. error, dB, ...)
    std::string detail;
};

inline bool all_passed(const std::vector<CheckResult>& rs) {
    for (const CheckResult& r : rs)
        if (!r.pass) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking (64-bit)
// ---------------------------------------------------------------------------

using D = double;
using DTensor = ad::Tensor<D>;
using DTape = ad::Tape<D>;

// Builds a scalar loss from the given inputs; must behave identically for
// tracked and untracked inputs.
using LossBuilder = std::function<DTensor(std::vector<DTensor>&)>;

namespace detail {

inline DTensor random_tensor(ad::Shape shape, Rng& rng, double scl = 1.0) {
    DTensor t = DTensor::zeros(std::move(shape));
    for (D& v : *t.data) v = rng.normal(0.0, scl);
    return t;
}

// Max relative error between tape gradients and central differences with
// step 1e-5 * scale, over every element of every input.
inline double max_rel_error(const LossBuilder& build, std::vector<DTensor> inputs) {
    DTape tape;
    std::vector<DTensor> tracked;
    tracked.reserve(inputs.size());
    for (DTensor& in : inputs) tracked.push_back(tape.leaf(in));
    DTensor loss = build(tracked);
    tape.backward(loss);

    double worst = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        const std::vector<D>& analytic = tape.grad(tracked[i].node);
        for (size_t j = 0; j < inputs[i].size(); ++j) {
            double x0 = (*inputs[i].data)[j];
            double h = 1e-5 * std::max(1.0, std::fabs(x0));
            (*inputs[i].data)[j] = x0 + h;
            double up = build(inputs).item();
            (*inputs[i].data)[j] = x0 - h;
            double dn = build(inputs).item();
            (*inputs[i].data)[j] = x0;
            double numeric = (up - dn) / (2.0 * h);
            double denom = std::max(1e-6, std::fabs(analytic[j]) + std::fabs(numeric));
            worst = std::max(worst, std::fabs(analytic[j] - numeric) / denom);
        }
    }
    return worst;
}

inline CheckResult grad_case(const std::string& name, const LossBuilder& build,
                             std::function<std::vector<DTensor>(Rng&)> make_inputs,
                             int trials = 10, double tol = 1e-4) {
    double worst = 0.0;
    Rng rng(0x6D6F64ULL ^ fnv1a64(name.data(), name.size()));
    for (int t = 0; t < trials; ++t) {
        std::vector<DTensor> inputs = make_inputs(rng);
        worst = std::max(worst, max_rel_error(build, inputs));
    }
    std::ostringstream os;
    os << "max rel err " << std::scientific << std::setprecision(2) << worst;
    return {name, worst < tol, worst, os.str()};
}

}  // namespace detail

inline CheckResult full_model_gradcheck();

// Per-operation finite-difference checks plus the full tiny-config model.
inline std::vector<CheckResult> gradcheck_suite() {
    using detail::grad_case;
    using detail::random_tensor;
    namespace A = emgttl::ad;
    std::vector<CheckResult> out;

    // A fixed random cotangent makes the scalar projection non-degenerate.
    auto project = [](const DTensor& y, uint64_t seed) {
        Rng r(seed);
        DTensor c = DTensor::zeros(y.shape);
        for (D& v : *c.data) v = r.normal();
        return A::sum(A::mul(y, c));
    };

    out.push_back(grad_case(
        "matmul 2d",
        [&](std::vector<DTensor>& in) { return project(A::matmul(in[0], in[1]), 11); },
        [&](Rng& r) {
            return std::vector<DTensor>{detail::random_tensor({3, 4}, r),
                                        detail::random_tensor({4, 5}, r)};
        }));
    out.push_back(grad_case(
        "matmul batched x shared weight",
        [&](std::vector<DTensor>& in) { return project(A::matmul(in[0], in[1]), 12); },
        [&](Rng& r) {
            return std::vector<DTensor>{detail::random_tensor({2, 3, 4}, r),
                                        detail::random_tensor({4, 5}, r)};
        }));
    out.push_back(grad_case(
        "matmul batched both",
        [&](std::vector<DTensor>& in) { return project(A::matmul(in[0], in[1]), 13); },
        [&](Rng& r) {
            return std::vector<DTensor>{detail::random_tensor({2, 3, 4}, r),
                                        detail::random_tensor({2, 4, 5}, r)};
        }));
    out.push_back(grad_case(
        "add same shape",
        [&](std::vector<DTensor>& in) { return project(A::add(in[0], in[1]), 14); },
        [&](Rng& r) {
            return std::vector<DTensor>{detail::random_tensor({4, 6}, r),
                                        detail::random_tensor({4, 6}, r)};
        }));
    out.push_back(grad_case(
        "add broadcast bias",
        [&](std::vector<DTensor>& in) { return project(A::add(in[0], in[1]), 15); },
        [&](Rng& r) {
            return std::vector<DTensor>{detail::random_tensor({3, 4, 6}, r),
                                        detail::random_tensor({6}, r)};
        }));
    out.push_back(grad_case(
        "mul", [&](std::vector<DTensor>& in) { return project(A::mul(in[0], in[1]), 16); },
        [&](Rng& r) {
            return std::vector<DTensor>{detail::random_tensor({5, 7}, r),
                                        detail::random_tensor({5, 7}, r)};
        }));
    out.push_back(grad_case(
        "scale",
        [&](std::vector<DTensor>& in) { return project(A::scale(in[0], D(0.37)), 17); },
        [&](Rng& r) { return std::vector<DTensor>{detail::random_tensor({6, 3}, r)}; }));
    out.push_back(grad_case(
        "softmax",
        [&](std::vector<DTensor>& in) { return project(A::softmax(in[0]), 18); },
        [&](Rng& r) { return std::vector<DTensor>{detail::random_tensor({4, 9}, r, 2.0)}; }));
    out.push_back(grad_case(
        "layer_norm",
        [&](std::vector<DTensor>& in) {
            return project(A::layer_norm(in[0], in[1], in[2]), 19);
        },
        [&](Rng& r) {
            DTensor g = detail::random_tensor({8}, r, 0.5);
            for (D& v : *g.data) v += 1.0;
            return std::vector<DTensor>{detail::random_tensor({3, 8}, r), g,
                                        detail::random_tensor({8}, r)};
        }));
    out.push_back(grad_case(
        "gelu", [&](std::vector<DTensor>& in) { return project(A::gelu(in[0]), 20); },
        [&](Rng& r) { return std::vector<DTensor>{detail::random_tensor({6, 5}, r, 1.5)}; }));
    out.push_back(grad_case(
        "dropout (training, fixed seed)",
        [&](std::vector<DTensor>& in) {
            return project(A::dropout(in[0], 0.3, true, 99), 21);
        },
        [&](Rng& r) { return std::vector<DTensor>{detail::random_tensor({8, 8}, r)}; }));
    out.push_back(grad_case(
        "cross_entropy",
        [&](std::vector<DTensor>& in) {
            return A::cross_entropy(in[0], std::vector<int>{2, 0, 5, 1});
        },
        [&](Rng& r) { return std::vector<DTensor>{detail::random_tensor({4, 6}, r, 2.0)}; }));
    out.push_back(grad_case(
        "sum", [&](std::vector<DTensor>& in) { return A::sum(in[0]); },
        [&](Rng& r) { return std::vector<DTensor>{detail::random_tensor({7, 3}, r)}; }));
    out.push_back(grad_case(
        "concat",
        [&](std::vector<DTensor>& in) { return project(A::concat(in[0], in[1], 1), 22); },
        [&](Rng& r) {
            return std::vector<DTensor>{detail::random_tensor({3, 2, 4}, r),
                                        detail::random_tensor({3, 5, 4}, r)};
        }));
    out.push_back(grad_case(
        "slice",
        [&](std::vector<DTensor>& in) { return project(A::slice(in[0], 1, 1, 3), 23); },
        [&](Rng& r) { return std::vector<DTensor>{detail::random_tensor({2, 6, 3}, r)}; }));
    out.push_back(grad_case(
        "reshape",
        [&](std::vector<DTensor>& in) { return project(A::reshape(in[0], {6, 4}), 24); },
        [&](Rng& r) { return std::vector<DTensor>{detail::random_tensor({2, 3, 4}, r)}; }));
    out.push_back(grad_case(
        "transpose",
        [&](std::vector<DTensor>& in) { return project(A::transpose(in[0], 1, 2), 25); },
        [&](Rng& r) { return std::vector<DTensor>{detail::random_tensor({2, 3, 4, 2}, r)}; }));
    out.push_back(grad_case(
        "expand_leading",
        [&](std::vector<DTensor>& in) { return project(A::expand_leading(in[0], 4), 26); },
        [&](Rng& r) { return std::vector<DTensor>{detail::random_tensor({3, 5}, r)}; }));

    out.push_back(full_model_gradcheck());
    return out;
}

// Every parameter of a tiny-config model against central differences.
inline CheckResult full_model_gradcheck() {
    model::ModelConfig cfg;
    cfg.channels = 2;
    cfg.window = 8;
    cfg.embed_dim = 8;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.encoder_hidden = 16;
    cfg.head_hidden1 = 8;
    cfg.head_hidden2 = 4;
    cfg.num_classes = 3;
    cfg.dropout_p = 0.1;

    model::ModelWeights<D> w = model::init_weights<D>(cfg, 7);
    Rng rng(123);
    DTensor x = DTensor::zeros({2, cfg.channels, cfg.window});
    for (D& v : *x.data) v = rng.normal(0.0, 0.7);
    std::vector<int> labels{1, 2};
    const uint64_t fwd_seed = 5;  // fixed: dropout masks identical across evals

    auto loss_value = [&]() {
        return ad::cross_entropy(model::forward(w, x, true, fwd_seed), labels).item();
    };

    DTape tape;
    model::ModelWeights<D> bound = model::bind(tape, w);
    DTensor loss = ad::cross_entropy(model::forward(bound, x, true, fwd_seed), labels);
    tape.backward(loss);
    model::collect_grads(tape, bound, w);

    double worst = 0.0;
    model::for_each_param(w, [&](model::Parameter<D>& p) {
        for (size_t j = 0; j < p.value.size(); ++j) {
            double x0 = (*p.value.data)[j];
            double h = 1e-5 * std::max(1.0, std::fabs(x0));
            (*p.value.data)[j] = x0 + h;
            double up = loss_value();
            (*p.value.data)[j] = x0 - h;
            double dn = loss_value();
            (*p.value.data)[j] = x0;
            double numeric = (up - dn) / (2.0 * h);
            double denom = std::max(1e-6, std::fabs(p.grad[j]) + std::fabs(numeric));
            worst = std::max(worst, std::fabs(p.grad[j] - numeric) / denom);
        }
    });
    std::ostringstream os;
    os << "max rel err " << std::scientific << std::setprecision(2) << worst << " over "
       << model::param_count(cfg) << " parameters";
    return {"full model (tiny config, all parameters)", worst < 1e-4, worst, os.str()};
}

// ---------------------------------------------------------------------------
// mu-law property grid
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> mu_law_suite(size_t grid = 100001, double mu = 255.0) {
    std::vector<CheckResult> out;
    double prev = -2.0;
    bool odd_ok = true, mono_ok = true, range_ok = true;
    double worst_inv = 0.0;
    for (size_t i = 0; i < grid; ++i) {
        double x = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(grid - 1);
        double y = dsp::mu_law(x, mu);
        if (std::fabs(dsp::mu_law(-x, mu) + y) > 1e-15) odd_ok = false;
        if (y <= prev) mono_ok = false;
        prev = y;
        if (std::fabs(y) > 1.0 + 1e-15) range_ok = false;
        worst_inv = std::max(worst_inv, std::fabs(dsp::mu_law_inverse(y, mu) - x));
    }
    bool endpoints = dsp::mu_law(0.0, mu) == 0.0 && std::fabs(dsp::mu_law(1.0, mu) - 1.0) < 1e-15 &&
                     std::fabs(dsp::mu_law(-1.0, mu) + 1.0) < 1e-15;
    out.push_back({"mu-law odd symmetry on grid", odd_ok, 0.0, "F(-x) = -F(x)"});
    out.push_back({"mu-law strictly increasing on grid", mono_ok, 0.0, ""});
    out.push_back({"mu-law range |F(x)| <= 1", range_ok, 0.0, ""});
    out.push_back({"mu-law endpoints F(0)=0, F(+-1)=+-1", endpoints, 0.0, ""});
    {
        std::ostringstream os;
        os << "max |G(F(x)) - x| = " << std::scientific << std::setprecision(2) << worst_inv;
        out.push_back({"mu-law inverse round-trip within 1e-9", worst_inv < 1e-9, worst_inv, os.str()});
    }
    return out;
}

// ---------------------------------------------------------------------------
// DSP suite: notch behavior, Butterworth corners, denoising Monte-Carlo
// ---------------------------------------------------------------------------

namespace detail {

inline dsp::SignalTrial sine_trial(double freq, double fs, double dur_s, double amp = 1.0) {
    dsp::SignalTrial t;
    t.channels = 1;
    t.num_samples = static_cast<size_t>(fs * dur_s);
    t.sample_rate_hz = fs;
    t.subject_id = "verify";
    t.trial_id = "sine";
    t.samples.resize(t.num_samples);
    for (size_t i = 0; i < t.num_samples; ++i)
        t.samples[i] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / fs);
    return t;
}

inline double rms_middle(const std::vector<double>& x) {
    size_t lo = x.size() / 4, hi = 3 * x.size() / 4;
    double s = 0.0;
    for (size_t i = lo; i < hi; ++i) s += x[i] * x[i];
    return std::sqrt(s / static_cast<double>(hi - lo));
}

}  // namespace detail

inline std::vector<CheckResult> dsp_suite() {
    using detail::rms_middle;
    using detail::sine_trial;
    std::vector<CheckResult> out;
    const double fs = 4000.0;

    // 50 Hz notch: kill the 50 Hz sine, pass 10 Hz nearly untouched. The
    // designed-response evaluation provides the independent prediction.
    dsp::FilterSpec notch = dsp::FilterSpec::notch(50.0, 35.0, true);
    auto sections = dsp::design_filter(notch, fs);
    {
        dsp::SignalTrial in = sine_trial(50.0, fs, 10.0);
        dsp::SignalTrial f = dsp::apply_filter(in, notch);
        double atten_db = 20.0 * std::log10(rms_middle(f.samples) / rms_middle(in.samples));
        std::ostringstream os;
        os << "measured " << std::fixed << std::setprecision(1) << atten_db
           << " dB (response predicts " << dsp::frequency_response_db(sections, 50.0, fs, true)
           << " dB at the exact tone)";
        out.push_back({"notch attenuates 50 Hz sine >= 30 dB", atten_db <= -30.0, atten_db, os.str()});
    }
    {
        dsp::SignalTrial in = sine_trial(10.0, fs, 10.0);
        dsp::SignalTrial f = dsp::apply_filter(in, notch);
        double atten_db = 20.0 * std::log10(rms_middle(f.samples) / rms_middle(in.samples));
        double predicted = dsp::frequency_response_db(sections, 10.0, fs, true);
        std::ostringstream os;
        os << "measured " << std::fixed << std::setprecision(4) << atten_db << " dB, predicted "
           << predicted << " dB";
        bool pass = std::fabs(atten_db) <= 1.0 && std::fabs(atten_db - predicted) < 0.2;
        out.push_back({"notch passes 10 Hz within 1 dB", pass, atten_db, os.str()});
    }

    // Butterworth corners: single-pass gain at the cutoff is -3.01 dB.
    {
        dsp::FilterSpec lp = dsp::FilterSpec::lowpass(500.0, 4, false);
        auto lp_sections = dsp::design_filter(lp, fs);
        double designed = dsp::frequency_response_db(lp_sections, 500.0, fs, false);
        dsp::SignalTrial in = sine_trial(500.0, fs, 10.0);
        dsp::SignalTrial f = dsp::apply_filter(in, lp);
        double measured = 20.0 * std::log10(rms_middle(f.samples) / rms_middle(in.samples));
        std::ostringstream os;
        os << "designed " << std::fixed << std::setprecision(3) << designed << " dB, measured "
           << measured << " dB";
        bool pass = std::fabs(designed + 3.0103) < 0.1 && std::fabs(measured - designed) < 0.3;
        out.push_back({"lowpass corner within 3 dB at cutoff", pass, measured, os.str()});
    }
    {
        dsp::FilterSpec hp = dsp::FilterSpec::highpass(20.0, 4, false);
        auto hp_sections = dsp::design_filter(hp, 2000.0);
        double designed = dsp::frequency_response_db(hp_sections, 20.0, 2000.0, false);
        dsp::SignalTrial in = sine_trial(20.0, 2000.0, 20.0);
        dsp::SignalTrial f = dsp::apply_filter(in, hp);
        double measured = 20.0 * std::log10(rms_middle(f.samples) / rms_middle(in.samples));
        std::ostringstream os;
        os << "designed " << std::fixed << std::setprecision(3) << designed << " dB, measured "
           << measured << " dB";
        bool pass = std::fabs(designed + 3.0103) < 0.1 && std::fabs(measured - designed) < 0.3;
        out.push_back({"highpass corner within 3 dB at cutoff", pass, measured, os.str()});
    }

    // Wavelet denoising reduces RMS error on noisy cubic trends, 20 seeds.
    {
        size_t n = 1024;
        std::vector<double> clean(n);
        for (size_t i = 0; i < n; ++i) {
            double t = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
            clean[i] = 3.0 + 2.0 * t - 1.5 * t * t + 0.5 * t * t * t;
        }
        int improved = 0;
        for (int s = 0; s < 20; ++s) {
            Rng rng(static_cast<uint64_t>(3000 + s));
            dsp::SignalTrial noisy;
            noisy.channels = 1;
            noisy.num_samples = n;
            noisy.sample_rate_hz = 1000.0;
            noisy.trial_id = "mc" + std::to_string(s);
            noisy.samples.resize(n);
            for (size_t i = 0; i < n; ++i) noisy.samples[i] = clean[i] + 0.3 * rng.normal();
            dsp::SignalTrial den = dsp::wavelet_denoise(noisy, dsp::DenoiseSpec{});
            double err_before = 0.0, err_after = 0.0;
            for (size_t i = 0; i < n; ++i) {
                err_before += (noisy.samples[i] - clean[i]) * (noisy.samples[i] - clean[i]);
                err_after += (den.samples[i] - clean[i]) * (den.samples[i] - clean[i]);
            }
            if (err_after < err_before) ++improved;
        }
        std::ostringstream os;
        os << improved << "/20 seeds improved";
        out.push_back({"wavelet denoising reduces RMS error (20-seed MC)", improved == 20,
                       static_cast<double>(improved), os.str()});
    }
    return out;
}

}  // namespace emgttl::verify
