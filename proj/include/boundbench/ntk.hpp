#ifndef BOUNDBENCH_NTK_HPP
#define BOUNDBENCH_NTK_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "boundbench/activations.hpp"
#include "boundbench/bounds.hpp"
#include "boundbench/linalg.hpp"
#include "boundbench/network.hpp"

namespace boundbench {

// ---------------------------------------------------------------------------
// Seeds and initialization
// ---------------------------------------------------------------------------

/// Independent stream seed per purpose (splitmix64 finalizer).
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t purpose) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (purpose + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

enum class StreamPurpose : std::uint64_t { Init = 1, Data = 2, Probes = 3, Warmup = 4 };

inline std::mt19937_64 make_rng(std::uint64_t seed, StreamPurpose purpose) {
    return std::mt19937_64(stream_seed(seed, static_cast<std::uint64_t>(purpose)));
}

struct InitSpec {
    std::size_t p = 0;
    std::size_t L = 0;
    std::uint64_t seed = 0;

    double hidden_variance() const { return 2.0 / static_cast<double>(p); }
    static constexpr double outer_variance = 1.0;
};

/// Hidden entries ~ N(0, 2/p), outer entries ~ N(0, 1).
inline WeightStack gaussian_init(const InitSpec& spec) {
    if (spec.p < 1 || spec.L < 1) {
        throw std::invalid_argument("gaussian_init: p and L must be at least 1");
    }
    auto rng = make_rng(spec.seed, StreamPurpose::Init);
    std::normal_distribution<double> hidden(0.0, std::sqrt(spec.hidden_variance()));
    std::normal_distribution<double> outer(0.0, std::sqrt(InitSpec::outer_variance));
    WeightStack V = WeightStack::zeros(spec.p, spec.L);
    for (std::size_t l = 0; l < spec.L; ++l) {
        for (double& v : V.layer(l).data()) {
            v = hidden(rng);
        }
    }
    for (double& v : V.outer().data()) {
        v = outer(rng);
    }
    return V;
}

// ---------------------------------------------------------------------------
// Tangent features
// ---------------------------------------------------------------------------

/// grad_V f_{V1}(x_s) in rank-one form.
using NtkFeature = OutputGradient;

inline std::vector<NtkFeature> ntk_features(const WeightStack& V1, const Activation& act, const Dataset& data) {
    if (data.width() != V1.width()) {
        throw ShapeError("ntk_features: dataset width differs from network width");
    }
    std::vector<NtkFeature> out(data.size());
    parallel_for(data.size(), [&](std::size_t s) { out[s] = output_gradient(V1, act, data.input(s)); });
    return out;
}

/// F_{V1,V}(x) = f_{V1}(x) + grad f_{V1}(x) . (V - V1), with D = V - V1.
inline double tangent_output(double f0, const NtkFeature& feature, const WeightStack& D) {
    return f0 + feature.dot(D);
}

// ---------------------------------------------------------------------------
// Clustered data
// ---------------------------------------------------------------------------

struct ClusteredDataSpec {
    std::size_t p = 0;
    /// Cluster centre; drawn uniformly on the sphere from the seed when empty.
    Vector mu;
    double r = 0.05;
    std::size_t n = 0;
    std::uint64_t seed = 0;
    /// Allows r > 1/16; a warning is recorded instead of rejecting.
    bool allow_large_r = false;
    std::size_t resample_budget = 10'000;
};

struct ClusteredData {
    Dataset data;
    Vector mu;
    std::vector<std::string> warnings;
};

/// Labels alternate +1, -1, +1, ... so even n is balanced. Each sample is
/// y*mu plus a random offset of norm at most r, projected to the sphere and
/// resampled until it is still within r of y*mu.
inline ClusteredData make_clustered_dataset(const ClusteredDataSpec& spec) {
    if (spec.n < 2) {
        throw std::invalid_argument("make_clustered_dataset: need n >= 2 so both labels occur");
    }
    if (!(spec.r >= 0.0) || !(spec.r < 1.0)) {
        throw std::invalid_argument("make_clustered_dataset: r must lie in [0, 1)");
    }
    ClusteredData out;
    if (spec.r > 1.0 / 16.0) {
        if (!spec.allow_large_r) {
            throw std::invalid_argument("make_clustered_dataset: r exceeds 1/16 (set allow_large_r to override)");
        }
        out.warnings.push_back("cluster radius r exceeds 1/16");
    }
    auto rng = make_rng(spec.seed, StreamPurpose::Data);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Vector mu = spec.mu;
    if (mu.empty()) {
        if (spec.p < 1) {
            throw std::invalid_argument("make_clustered_dataset: need p or mu");
        }
        mu.resize(spec.p);
        for (double& v : mu) {
            v = gauss(rng);
        }
    }
    const double nmu = norm2(mu);
    if (!(nmu > 0.0)) {
        throw std::invalid_argument("make_clustered_dataset: mu must be nonzero");
    }
    if (!spec.mu.empty() && std::abs(nmu - 1.0) > 1e-12) {
        out.warnings.push_back("mu rescaled to unit norm");
    }
    for (double& v : mu) {
        v /= nmu;
    }
    const std::size_t p = mu.size();

    std::vector<Vector> xs;
    std::vector<int> ys;
    for (std::size_t s = 0; s < spec.n; ++s) {
        const int y = s % 2 == 0 ? 1 : -1;
        Vector centre(p);
        for (std::size_t i = 0; i < p; ++i) {
            centre[i] = y * mu[i];
        }
        if (spec.r == 0.0) {
            xs.push_back(centre);
            ys.push_back(y);
            continue;
        }
        bool placed = false;
        for (std::size_t attempt = 0; attempt < spec.resample_budget && !placed; ++attempt) {
            Vector dir(p);
            for (double& v : dir) {
                v = gauss(rng);
            }
            const double nd = norm2(dir);
            const double len = spec.r * unif(rng);
            Vector x(p);
            for (std::size_t i = 0; i < p; ++i) {
                x[i] = centre[i] + len * dir[i] / nd;
            }
            const double nx = norm2(x);
            for (double& v : x) {
                v /= nx;
            }
            double dist = 0.0;
            for (std::size_t i = 0; i < p; ++i) {
                dist += (x[i] - centre[i]) * (x[i] - centre[i]);
            }
            if (std::sqrt(dist) <= spec.r) {
                xs.push_back(std::move(x));
                ys.push_back(y);
                placed = true;
            }
        }
        if (!placed) {
            throw std::runtime_error("make_clustered_dataset: resample budget exhausted");
        }
    }
    out.data = Dataset(std::move(xs), std::move(ys));
    out.mu = std::move(mu);
    return out;
}

// ---------------------------------------------------------------------------
// Margin witnesses
// ---------------------------------------------------------------------------

enum class WitnessConstruction { ClusteredExplicit, SubgradientEstimate };

struct MarginWitness {
    WeightStack W_star;
    double gamma = 0.0;
    WitnessConstruction construction = WitnessConstruction::ClusteredExplicit;
    std::size_t s_plus = 0;
    std::size_t s_minus = 0;
};

/// min_s y_s (feature_s . W) / (sqrt(p) ||W||)
inline double margin_of(const std::vector<NtkFeature>& features, const std::vector<int>& labels,
                        const WeightStack& W) {
    if (features.empty() || features.size() != labels.size()) {
        throw std::invalid_argument("margin_of: features and labels must be nonempty and aligned");
    }
    const double scale = std::sqrt(static_cast<double>(W.width())) * frobenius_norm(W);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < features.size(); ++s) {
        best = std::min(best, labels[s] * features[s].dot(W) / scale);
    }
    return best;
}

/// Explicit unit-norm witness for a two-layer Huberized network on clustered
/// data: rows i with 1/2 <= |v_i| <= 2 (v the outer layer) and
/// |V1_i . mu| >= 4h point along sign(v_i) mu; everything else is zero.
inline MarginWitness margin_witness_clustered(const WeightStack& V1, const Activation& act, const Dataset& data,
                                              const Vector& mu) {
    if (V1.depth() != 1) {
        throw std::invalid_argument("margin_witness_clustered: requires a two-layer network (L = 1)");
    }
    if (act.kind() != ActivationKind::HuberizedReLU) {
        throw std::invalid_argument("margin_witness_clustered: requires the Huberized ReLU");
    }
    const std::size_t p = V1.width();
    if (mu.size() != p) {
        throw ShapeError("margin_witness_clustered: mu has the wrong dimension");
    }
    const double h_cap = std::sqrt(std::numbers::pi) / (2.0 * static_cast<double>(p));
    if (act.h() > h_cap) {
        throw std::invalid_argument("margin_witness_clustered: h must be at most sqrt(pi)/(2p)");
    }
    const Matrix& first = V1.hidden(0);
    const Matrix& outer = V1.outer();
    std::vector<int> sign(p, 0);
    MarginWitness w;
    w.construction = WitnessConstruction::ClusteredExplicit;
    for (std::size_t i = 0; i < p; ++i) {
        const double a = std::abs(outer(0, i));
        if (a < 0.5 || a > 2.0) {
            continue;
        }
        const double proj = dot(first.row(i), mu);
        if (proj >= 4.0 * act.h()) {
            ++w.s_plus;
        } else if (-proj >= 4.0 * act.h()) {
            ++w.s_minus;
        } else {
            continue;
        }
        sign[i] = outer(0, i) >= 0.0 ? 1 : -1;
    }
    if (w.s_plus + w.s_minus == 0) {
        throw std::runtime_error("margin_witness_clustered: no qualifying hidden units (degenerate init)");
    }
    const double c = 1.0 / std::sqrt(static_cast<double>(w.s_plus + w.s_minus));
    w.W_star = WeightStack::zeros(p, 1);
    Matrix& W1 = w.W_star.layer(0);
    for (std::size_t i = 0; i < p; ++i) {
        if (sign[i] == 0) {
            continue;
        }
        for (std::size_t j = 0; j < p; ++j) {
            W1(i, j) = sign[i] * mu[j] * c;
        }
    }
    const auto features = ntk_features(V1, act, data);
    w.gamma = margin_of(features, data.labels(), w.W_star);
    return w;
}

/// Projected subgradient ascent on the unit sphere for the normalized margin;
/// returns the best iterate seen with its margin re-evaluated exactly.
inline MarginWitness margin_estimate_subgradient(const std::vector<NtkFeature>& features,
                                                 const std::vector<int>& labels, std::size_t iters,
                                                 double step) {
    if (features.empty() || features.size() != labels.size()) {
        throw std::invalid_argument("margin_estimate_subgradient: need n >= 1 aligned features and labels");
    }
    if (iters < 1 || !(step > 0.0)) {
        throw std::invalid_argument("margin_estimate_subgradient: need iters >= 1 and step > 0");
    }
    const std::size_t n = features.size();
    const std::size_t p = features.front().outer.size();
    const std::size_t L = features.front().depth();
    const double root_p = std::sqrt(static_cast<double>(p));

    std::vector<WeightStack> dense;
    dense.reserve(n);
    for (const auto& f : features) {
        dense.push_back(f.dense());
    }
    // Start from the label-weighted mean feature.
    WeightStack W = WeightStack::zeros(p, L);
    for (std::size_t s = 0; s < n; ++s) {
        W = stack_axpy(W, static_cast<double>(labels[s]), dense[s]);
    }
    double nw = frobenius_norm(W);
    if (!(nw > 0.0)) {
        W = dense.front();
        nw = frobenius_norm(W);
        if (!(nw > 0.0)) {
            throw std::runtime_error("margin_estimate_subgradient: all features vanish");
        }
    }
    W = stack_scale(W, 1.0 / nw);

    auto worst = [&](const WeightStack& cand, std::size_t& arg) {
        double m = std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < n; ++s) {
            const double v = labels[s] * stack_dot(dense[s], cand) / root_p;
            if (v < m) {
                m = v;
                arg = s;
            }
        }
        return m;
    };

    MarginWitness best;
    best.construction = WitnessConstruction::SubgradientEstimate;
    std::size_t arg = 0;
    best.gamma = worst(W, arg);
    best.W_star = W;
    for (std::size_t k = 1; k <= iters; ++k) {
        const double eta = step / std::sqrt(static_cast<double>(k));
        W = stack_axpy(W, eta * labels[arg], dense[arg]);
        W = stack_scale(W, 1.0 / frobenius_norm(W));
        const double m = worst(W, arg);
        if (m > best.gamma) {
            best.gamma = m;
            best.W_star = W;
        }
    }
    best.W_star = stack_scale(best.W_star, 1.0 / frobenius_norm(best.W_star));
    best.gamma = margin_of(features, labels, best.W_star);
    return best;
}

// ---------------------------------------------------------------------------
// Tangent-model (NT class) quantities
// ---------------------------------------------------------------------------

/// Per-layer Frobenius distance max_l ||A_l - B_l||.
inline double max_layer_distance(const WeightStack& A, const WeightStack& B) {
    require_same_shape(A, B, "max_layer_distance");
    double best = 0.0;
    for (std::size_t k = 0; k < A.num_layers(); ++k) {
        double acc = 0.0;
        auto a = A.layer(k).data();
        auto b = B.layer(k).data();
        for (std::size_t i = 0; i < a.size(); ++i) {
            acc += (a[i] - b[i]) * (a[i] - b[i]);
        }
        best = std::max(best, std::sqrt(acc));
    }
    return best;
}

/// Projects each layer of D onto the Frobenius ball of radius rho.
inline WeightStack project_layers(WeightStack D, double rho) {
    for (std::size_t k = 0; k < D.num_layers(); ++k) {
        const double nk = frobenius_norm(D.layer(k));
        if (nk > rho) {
            const double c = rho > 0.0 ? rho / nk : 0.0;
            for (double& v : D.layer(k).data()) {
                v *= c;
            }
        }
    }
    return D;
}

struct NtBallConfig {
    double rho = 0.0;
    std::size_t steps = 200;
    double step_size = 1.0;
    /// Start from a random point of the ball instead of V1.
    std::optional<std::uint64_t> restart_seed;
    std::size_t max_halvings = 60;
};

struct NtClassResult {
    WeightStack V_star;
    double eps_nt = 0.0;
    std::vector<double> objective;  // one entry per accepted iterate, starting with the initial point
    std::size_t halvings = 0;
};

/// Tangent-model loss at offset D from V1.
inline LossValue nt_objective(const std::vector<double>& f0, const std::vector<NtkFeature>& features,
                              const Dataset& data, const WeightStack& D) {
    std::vector<LossValue> per(data.size());
    for (std::size_t s = 0; s < data.size(); ++s) {
        per[s] = logistic_loss(static_cast<double>(data.label(s)) * tangent_output(f0[s], features[s], D));
    }
    return mean_loss(per);
}

/// Minimizes the tangent-model logistic loss over max_l ||V_l - V1_l|| <= rho
/// by projected gradient descent. A step that would raise the objective is
/// retried at half the step size, so accepted objectives never increase.
inline NtClassResult nt_class_minimize(const WeightStack& V1, const Activation& act, const Dataset& data,
                                       const NtBallConfig& cfg) {
    if (!(cfg.rho >= 0.0)) {
        throw std::invalid_argument("nt_class_minimize: rho must be nonnegative");
    }
    const std::size_t p = V1.width();
    const std::size_t L = V1.depth();
    const std::size_t n = data.size();
    std::vector<double> f0(n);
    std::vector<NtkFeature> features(n);
    for (std::size_t s = 0; s < n; ++s) {
        const ForwardTrace tr = forward(V1, act, data.input(s));
        f0[s] = tr.output;
        features[s] = output_gradient(V1, tr);
    }

    WeightStack D = WeightStack::zeros(p, L);
    if (cfg.restart_seed && cfg.rho > 0.0) {
        auto rng = make_rng(*cfg.restart_seed, StreamPurpose::Probes);
        D = random_perturbation(p, L, cfg.rho, rng, /*per_layer_ball=*/true);
    }
    NtClassResult res;
    double obj = nt_objective(f0, features, data, D).value;
    res.objective.push_back(obj);
    double eta = cfg.step_size;
    if (cfg.rho > 0.0) {
        std::vector<double> coeff(n);
        for (std::size_t it = 0; it < cfg.steps; ++it) {
            for (std::size_t s = 0; s < n; ++s) {
                const double y = static_cast<double>(data.label(s));
                coeff[s] = -y * logistic_weight(y * tangent_output(f0[s], features[s], D));
            }
            const WeightStack grad = combine_gradients(features, coeff, 1.0 / static_cast<double>(n), p, L);
            bool accepted = false;
            for (std::size_t k = 0; k <= cfg.max_halvings; ++k) {
                WeightStack cand = project_layers(stack_axpy(D, -eta, grad), cfg.rho);
                const double cobj = nt_objective(f0, features, data, cand).value;
                if (cobj <= obj) {
                    D = std::move(cand);
                    obj = cobj;
                    accepted = true;
                    break;
                }
                eta *= 0.5;
                ++res.halvings;
            }
            if (!accepted) {
                break;
            }
            res.objective.push_back(obj);
        }
    }
    res.V_star = stack_axpy(V1, 1.0, D);
    res.eps_nt = obj;
    return res;
}

/// Sampled lower estimate of the worst first-order Taylor remainder of f
/// over pairs of points in the per-layer ball of radius tau around V1.
inline double approx_error_sample(const WeightStack& V1, const Activation& act, const Dataset& data, double tau,
                                  std::size_t k_pairs, std::uint64_t seed) {
    if (!(tau >= 0.0) || k_pairs < 1) {
        throw std::invalid_argument("approx_error_sample: need tau >= 0 and k_pairs >= 1");
    }
    auto rng = make_rng(seed, StreamPurpose::Probes);
    const std::size_t p = V1.width();
    const std::size_t L = V1.depth();
    double worst = 0.0;
    for (std::size_t k = 0; k < k_pairs; ++k) {
        const WeightStack Vhat = stack_axpy(V1, 1.0, random_perturbation(p, L, tau, rng, true));
        const WeightStack Vtil = stack_axpy(V1, 1.0, random_perturbation(p, L, tau, rng, true));
        const WeightStack diff = stack_axpy(Vhat, -1.0, Vtil);
        for (std::size_t s = 0; s < data.size(); ++s) {
            const double fhat = forward(Vhat, act, data.input(s)).output;
            const ForwardTrace tr = forward(Vtil, act, data.input(s));
            const double lin = output_gradient(Vtil, tr).dot(diff);
            worst = std::max(worst, std::abs(fhat - tr.output - lin));
        }
    }
    return worst;
}

/// C sqrt(p log p) L^5 tau^(4/3)
inline double approx_error_upper_bound(std::size_t p, std::size_t L, double tau, double constant) {
    const double pd = static_cast<double>(p);
    return constant * std::sqrt(pd * std::log(pd)) * std::pow(static_cast<double>(L), 5.0) *
           std::pow(tau, 4.0 / 3.0);
}

/// Sampled lower estimate of max over samples, layers and the tau-ball of
/// ||grad_{V_l} f_V(x_s)||. At tau = 0 only V1 is evaluated, so the value is exact.
inline double gamma_bound(const WeightStack& V1, const Activation& act, const Dataset& data, double tau,
                          std::size_t k_samples = 16, std::uint64_t seed = 0) {
    if (!(tau >= 0.0)) {
        throw std::invalid_argument("gamma_bound: tau must be nonnegative");
    }
    auto layer_max = [&](const WeightStack& V) {
        double best = 0.0;
        for (std::size_t s = 0; s < data.size(); ++s) {
            const OutputGradient g = output_gradient(V, act, data.input(s));
            for (std::size_t k = 0; k <= V.depth(); ++k) {
                best = std::max(best, g.layer_norm(k));
            }
        }
        return best;
    };
    double best = layer_max(V1);
    if (tau > 0.0) {
        auto rng = make_rng(seed, StreamPurpose::Probes);
        for (std::size_t k = 0; k < k_samples; ++k) {
            best = std::max(best, layer_max(stack_axpy(
                                      V1, 1.0, random_perturbation(V1.width(), V1.depth(), tau, rng, true))));
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Initialization diagnostics
// ---------------------------------------------------------------------------

struct DiagnosticRanges {
    double x_norm_lo = 0.9;
    double x_norm_hi = 1.1;
    double hidden_op_max = 3.5;
    double outer_ratio_lo = 0.85;
    double outer_ratio_hi = 1.2;
};

struct DiagnosticOptions {
    DiagnosticRanges ranges;
    PowerIterationOptions power{1e-6, 2'000, 0x5eed};
    /// When set, two stacks are drawn in the tau-ball and their activation
    /// pattern differences counted.
    std::optional<double> tau;
    std::uint64_t seed = 0;
};

struct LayerStats {
    double min = std::numeric_limits<double>::infinity();
    double max = 0.0;
    double mean = 0.0;
};

struct InitDiagnostics {
    std::vector<LayerStats> x_norms;                // per hidden layer, over samples
    std::vector<OperatorNorm> hidden_operator_norms;
    double outer_ratio = 0.0;                       // ||V_{L+1}|| / sqrt(p)
    bool x_norms_in_range = false;
    bool hidden_operator_in_range = false;
    bool outer_ratio_in_range = false;
    bool wide_regime = false;
    /// Per hidden layer: max over samples of the count of differing activation slopes.
    std::vector<std::size_t> sigma_difference_counts;
    std::vector<std::string> warnings;

    bool all_in_range() const { return x_norms_in_range && hidden_operator_in_range && outer_ratio_in_range; }
};

inline InitDiagnostics init_diagnostics(const WeightStack& V1, const Activation& act, const Dataset& data,
                                        const DiagnosticOptions& opt = {}) {
    const std::size_t p = V1.width();
    const std::size_t L = V1.depth();
    InitDiagnostics d;
    d.wide_regime = p >= 256;
    if (!d.wide_regime) {
        d.warnings.push_back("width p < 256: concentration ranges are not expected to hold");
    }
    std::vector<ForwardTrace> traces(data.size());
    parallel_for(data.size(), [&](std::size_t s) { traces[s] = forward(V1, act, data.input(s)); });
    d.x_norms.resize(L);
    d.x_norms_in_range = true;
    for (std::size_t l = 0; l < L; ++l) {
        LayerStats& st = d.x_norms[l];
        for (const auto& tr : traces) {
            const double nx = norm2(tr.x[l]);
            st.min = std::min(st.min, nx);
            st.max = std::max(st.max, nx);
            st.mean += nx / static_cast<double>(traces.size());
        }
        if (st.min < opt.ranges.x_norm_lo || st.max > opt.ranges.x_norm_hi) {
            d.x_norms_in_range = false;
            d.warnings.push_back("layer " + std::to_string(l + 1) + " post-activation norm outside range");
        }
    }
    d.hidden_operator_norms.resize(L);
    parallel_for(L, [&](std::size_t l) { d.hidden_operator_norms[l] = operator_norm(V1.hidden(l), opt.power); });
    d.hidden_operator_in_range = true;
    for (std::size_t l = 0; l < L; ++l) {
        if (!d.hidden_operator_norms[l].converged) {
            d.warnings.push_back("operator norm of layer " + std::to_string(l + 1) + " did not converge");
        }
        if (d.hidden_operator_norms[l].value > opt.ranges.hidden_op_max) {
            d.hidden_operator_in_range = false;
            d.warnings.push_back("layer " + std::to_string(l + 1) + " operator norm above range");
        }
    }
    d.outer_ratio = frobenius_norm(V1.outer()) / std::sqrt(static_cast<double>(p));
    d.outer_ratio_in_range = d.outer_ratio >= opt.ranges.outer_ratio_lo && d.outer_ratio <= opt.ranges.outer_ratio_hi;
    if (!d.outer_ratio_in_range) {
        d.warnings.push_back("outer layer norm / sqrt(p) outside range");
    }
    if (opt.tau) {
        auto rng = make_rng(opt.seed, StreamPurpose::Probes);
        const WeightStack A = stack_axpy(V1, 1.0, random_perturbation(p, L, *opt.tau, rng, true));
        const WeightStack B = stack_axpy(V1, 1.0, random_perturbation(p, L, *opt.tau, rng, true));
        d.sigma_difference_counts.assign(L, 0);
        for (std::size_t s = 0; s < data.size(); ++s) {
            const ForwardTrace ta = forward(A, act, data.input(s));
            const ForwardTrace tb = forward(B, act, data.input(s));
            for (std::size_t l = 0; l < L; ++l) {
                std::size_t count = 0;
                for (std::size_t i = 0; i < p; ++i) {
                    if (ta.sigma_diag[l][i] != tb.sigma_diag[l][i]) {
                        ++count;
                    }
                }
                d.sigma_difference_counts[l] = std::max(d.sigma_difference_counts[l], count);
            }
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Two-phase schedule
// ---------------------------------------------------------------------------

struct PhasePlan {
    double alpha_nt = 0.0;
    /// Phase-one length from the closed form; may be astronomically large.
    double T_formula = 0.0;
    /// Steps actually budgeted for phase one.
    std::size_t T = 1;
    double h_nt = 0.0;
    double rho = 0.0;
    double gamma = 0.0;
    double delta = 0.1;
    double c1 = 1.0;
    double theta_const = 1.0;
    /// Stop phase one early once the loss drops below this (desk-scale override).
    std::optional<double> phase1_loss_threshold;
};

/// (1 + 24L) log n / (6 (6p)^((L+1)/2) L^3)
inline double compute_h_nt(std::size_t p, std::size_t L, std::size_t n) {
    const double Ld = static_cast<double>(L);
    return (1.0 + 24.0 * Ld) * std::log(static_cast<double>(n)) /
           (6.0 * std::pow(6.0 * static_cast<double>(p), (Ld + 1.0) / 2.0) * Ld * Ld * Ld);
}

/// c1 / (sqrt(p) gamma) [sqrt(log(n/delta)) + log(6 n^(2+24L))]
inline double compute_rho(std::size_t p, std::size_t L, std::size_t n, double gamma, double delta, double c1) {
    const double nd = static_cast<double>(n);
    const double Ld = static_cast<double>(L);
    return c1 / (std::sqrt(static_cast<double>(p)) * gamma) *
           (std::sqrt(std::log(nd / delta)) + std::log(6.0) + (2.0 + 24.0 * Ld) * std::log(nd));
}

/// ceil(3 (L+1) rho^2 n^(2+24L) / (2 alpha)), evaluated in log space; +inf on overflow.
inline double compute_phase1_length(std::size_t L, std::size_t n, double rho, double alpha_nt) {
    const double Ld = static_cast<double>(L);
    const double log_T = std::log(3.0 * (Ld + 1.0) * rho * rho / (2.0 * alpha_nt)) +
                         (2.0 + 24.0 * Ld) * std::log(static_cast<double>(n));
    if (log_T > std::log(std::numeric_limits<double>::max())) {
        return std::numeric_limits<double>::infinity();
    }
    return std::ceil(std::exp(log_T));
}

inline PhasePlan make_phase_plan(std::size_t p, std::size_t L, std::size_t n, double gamma, double delta = 0.1,
                                 double c1 = 1.0, double theta_const = 1.0) {
    if (!(gamma > 0.0) || !(delta > 0.0) || !(c1 > 0.0) || !(theta_const > 0.0)) {
        throw std::invalid_argument("make_phase_plan: gamma, delta, c1 and theta_const must be positive");
    }
    PhasePlan plan;
    plan.gamma = gamma;
    plan.delta = delta;
    plan.c1 = c1;
    plan.theta_const = theta_const;
    plan.alpha_nt = theta_const / (static_cast<double>(p) * std::pow(static_cast<double>(L), 5.0));
    plan.h_nt = compute_h_nt(p, L, n);
    plan.rho = compute_rho(p, L, n, gamma, delta, c1);
    plan.T_formula = compute_phase1_length(L, n, plan.rho, plan.alpha_nt);
    plan.T = plan.T_formula < 1e9 ? static_cast<std::size_t>(plan.T_formula) : std::size_t{1'000'000'000};
    return plan;
}


// ---------------------------------------------------------------------------
// Monitored gradient descent
// ---------------------------------------------------------------------------

struct DescentOptions {
    std::size_t max_steps = 0;
    /// Stop once the loss falls below this (0 disables).
    double loss_floor = 0.0;
    /// Global index of the first record; rate bounds use the index relative to the start.
    std::size_t t_offset = 0;
    int phase = 1;
    Tolerances tol;
};

struct DescentResult {
    std::vector<StepRecord> records;
    WeightStack V_final;
    LossValue J_final;
};

inline void require_finite(const Evaluation& ev, std::size_t t) {
    if (!std::isfinite(ev.loss.value) || !ev.gradient.all_finite()) {
        throw std::runtime_error("non-finite loss or gradient at step " + std::to_string(t));
    }
}

/// GD at the constant step constants.alpha from V1, one record per step. Each
/// record holds the state before the step and the descent check against the state after it.
inline DescentResult monitored_descent(const WeightStack& V1, const Activation& act, const Dataset& data,
                                       const TheoryConstants& constants, const DescentOptions& opt) {
    DescentResult res;
    WeightStack V = V1;
    Evaluation ev = evaluate(V, act, data);
    require_finite(ev, opt.t_offset + 1);
    StepState st = measure_state(1, V, ev);
    for (std::size_t k = 0; k < opt.max_steps; ++k) {
        WeightStack Vn = gd_step(V, constants.alpha, ev.gradient);
        Evaluation evn = evaluate(Vn, act, data);
        require_finite(evn, opt.t_offset + k + 2);
        const StepState stn = measure_state(st.t + 1, Vn, evn);
        StepRecord rec = monitor_transition(st, stn, constants, opt.tol);
        rec.t = opt.t_offset + st.t;
        rec.phase = opt.phase;
        res.records.push_back(rec);
        V = std::move(Vn);
        ev = std::move(evn);
        st = stn;
        if (opt.loss_floor > 0.0 && st.J.value < opt.loss_floor) {
            break;
        }
    }
    res.V_final = std::move(V);
    res.J_final = st.J;
    return res;
}

// ---------------------------------------------------------------------------
// Average-loss bound over a run that stays near initialization
// ---------------------------------------------------------------------------

struct AverageLossCheck {
    std::size_t T = 0;
    double alpha = 0.0;
    double rho = 0.0;
    double tau = 0.0;
    double average_loss = 0.0;
    double eps_nt = 0.0;
    /// Sampled, so it sits below the true supremum.
    double eps_app_lower = 0.0;
    double start_distance = 0.0;  // ||V1 - V*||
    double end_distance = 0.0;    // ||V^(T+1) - V*||
    double max_iterate_distance = 0.0;
    double star_distance = 0.0;
    bool iterates_in_ball = false;
    bool star_in_ball = false;
    bool applicable = false;
    /// (||V1-V*||^2 + 2 T alpha eps_nt) / (T alpha (3/2 - 4 eps_app))
    double bound = std::numeric_limits<double>::quiet_NaN();
    /// Same with -||V^(T+1)-V*||^2 in the numerator.
    double bound_with_end = std::numeric_limits<double>::quiet_NaN();
    bool pass = false;
};

struct AverageLossOptions {
    double alpha = 0.0;
    std::size_t T = 0;
    double rho = 0.0;
    double tau = 0.0;
    std::size_t k_pairs = 32;
    std::uint64_t seed = 0;
    NtBallConfig nt{};
};

/// Runs T plain GD steps from V1 and compares their average loss with the
/// tangent-model bound. The check only applies when every iterate V^(1..T)
/// and V* lie in the per-layer tau-ball and the sampled eps_app is below 3/8.
inline AverageLossCheck check_average_loss_bound(const WeightStack& V1, const Activation& act, const Dataset& data,
                                                 const AverageLossOptions& opt) {
    if (!(opt.alpha > 0.0) || opt.T < 1 || !(opt.rho >= 0.0) || !(opt.tau >= 0.0)) {
        throw std::invalid_argument("check_average_loss_bound: need alpha > 0, T >= 1, rho >= 0, tau >= 0");
    }
    AverageLossCheck c;
    c.T = opt.T;
    c.alpha = opt.alpha;
    c.rho = opt.rho;
    c.tau = opt.tau;
    NtBallConfig nt = opt.nt;
    nt.rho = opt.rho;
    const NtClassResult star = nt_class_minimize(V1, act, data, nt);
    c.eps_nt = star.eps_nt;
    c.star_distance = max_layer_distance(star.V_star, V1);
    c.star_in_ball = c.star_distance <= opt.tau;
    c.eps_app_lower = approx_error_sample(V1, act, data, opt.tau, opt.k_pairs, opt.seed);

    WeightStack V = V1;
    double sum = 0.0;
    for (std::size_t t = 1; t <= opt.T; ++t) {
        const Evaluation ev = evaluate(V, act, data);
        require_finite(ev, t);
        sum += ev.loss.value;
        c.max_iterate_distance = std::max(c.max_iterate_distance, max_layer_distance(V, V1));
        V = gd_step(V, opt.alpha, ev.gradient);
    }
    c.average_loss = sum / static_cast<double>(opt.T);
    c.iterates_in_ball = c.max_iterate_distance <= opt.tau;
    c.start_distance = frobenius_norm(stack_axpy(V1, -1.0, star.V_star));
    c.end_distance = frobenius_norm(stack_axpy(V, -1.0, star.V_star));

    const double Ta = static_cast<double>(opt.T) * opt.alpha;
    const double denom = Ta * (1.5 - 4.0 * c.eps_app_lower);
    c.applicable = c.iterates_in_ball && c.star_in_ball && c.eps_app_lower < 0.375;
    c.bound = (c.start_distance * c.start_distance + 2.0 * Ta * c.eps_nt) / denom;
    c.bound_with_end =
        (c.start_distance * c.start_distance - c.end_distance * c.end_distance + 2.0 * Ta * c.eps_nt) / denom;
    c.pass = c.applicable && c.average_loss <= c.bound;
    return c;
}

// ---------------------------------------------------------------------------
// Two-phase training
// ---------------------------------------------------------------------------

struct TwoPhaseResult {
    PhasePlan plan;
    std::vector<StepRecord> records;
    std::size_t phase1_steps = 0;
    /// 1-based step of the smallest phase-one loss (earliest on ties).
    std::size_t argmin_step = 1;
    LossValue argmin_loss;
    bool threshold_reached = false;
    std::optional<TheoryConstants> phase2_constants;
    WeightStack V_final;
    LossValue J_final;
};

/// Phase one runs plan.T steps at alpha_nt (stopping early at the loss
/// threshold, if any) and keeps the best iterate. Phase two restarts there
/// with the step size computed from that iterate's loss and norm, until
/// max_total_steps records exist or the loss floor is reached.
inline TwoPhaseResult two_phase_train(const WeightStack& V1, const Activation& act, const Dataset& data,
                                      const PhasePlan& plan, std::size_t max_total_steps, double loss_floor = 0.0,
                                      const Tolerances& tol = {}) {
    if (!(plan.alpha_nt > 0.0)) {
        throw std::invalid_argument("two_phase_train: alpha_nt must be positive");
    }
    if (plan.T < 1) {
        throw std::invalid_argument("two_phase_train: T must be at least 1");
    }
    const std::size_t p = V1.width();
    const std::size_t L = V1.depth();
    const std::size_t n = data.size();
    TwoPhaseResult res;
    res.plan = plan;

    WeightStack V = V1;
    WeightStack best = V1;
    Evaluation ev = evaluate(V, act, data);
    require_finite(ev, 1);
    res.argmin_loss = ev.loss;
    for (std::size_t t = 1; t <= plan.T; ++t) {
        const StepState st = measure_state(t, V, ev);
        StepRecord rec = monitor_unconstrained(st, p, L, n, tol);
        rec.phase = 1;
        res.records.push_back(rec);
        ++res.phase1_steps;
        if (st.J.value < res.argmin_loss.value) {
            res.argmin_loss = st.J;
            res.argmin_step = t;
            best = V;
        }
        if (plan.phase1_loss_threshold && st.J.value < *plan.phase1_loss_threshold) {
            res.threshold_reached = true;
            break;
        }
        if (t == plan.T) {
            break;
        }
        V = gd_step(V, plan.alpha_nt, ev.gradient);
        ev = evaluate(V, act, data);
        require_finite(ev, t + 1);
    }

    res.V_final = best;
    res.J_final = res.argmin_loss;
    const std::size_t phase2_steps = max_total_steps > res.phase1_steps ? max_total_steps - res.phase1_steps : 0;
    if (phase2_steps == 0) {
        return res;
    }
    if (!(res.argmin_loss.log_value < 0.0)) {
        throw std::runtime_error("two_phase_train: phase one never reached a loss below 1; phase two is undefined");
    }
    TheoryInputs in{res.argmin_loss, p, L, frobenius_norm(best), n};
    const AlphaMax am = alpha_max_terms_unchecked(act.h(), in.J1, p, L, in.normV1);
    const TheoryConstants c = make_constants(in, act.h(), am.value);
    res.phase2_constants = c;
    DescentOptions dopt;
    dopt.max_steps = phase2_steps;
    dopt.loss_floor = loss_floor;
    dopt.t_offset = res.phase1_steps;
    dopt.phase = 2;
    dopt.tol = tol;
    DescentResult d = monitored_descent(best, act, data, c, dopt);
    for (auto& r : d.records) {
        res.records.push_back(std::move(r));
    }
    res.V_final = std::move(d.V_final);
    res.J_final = d.J_final;
    return res;
}

}  // namespace boundbench

#endif  // BOUNDBENCH_NTK_HPP
