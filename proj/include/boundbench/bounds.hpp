#ifndef BOUNDBENCH_BOUNDS_HPP
#define BOUNDBENCH_BOUNDS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "boundbench/activations.hpp"
#include "boundbench/linalg.hpp"
#include "boundbench/network.hpp"

namespace boundbench {

/// Loss value from a plain double, with the log channel filled in.
inline LossValue loss_of(double J) { return LossValue{J, std::log(J)}; }

/// log(1/J) from the log channel.
inline double log_inv(const LossValue& J) { return -J.log_value; }

/// log of the small-loss threshold 1 / n^(1+24L).
inline double log_small_loss_threshold(std::size_t n, std::size_t L) {
    return -(1.0 + 24.0 * static_cast<double>(L)) * std::log(static_cast<double>(n));
}

inline void require_log_loss_below_one(const LossValue& J1, const char* what) {
    if (!(J1.log_value < 0.0) || !(J1.value > 0.0)) {
        throw std::invalid_argument(std::string(what) + ": initial loss must lie in (0, 1)");
    }
}

inline double compute_h_max(const LossValue& J1, std::size_t p, std::size_t L, double normV1) {
    require_log_loss_below_one(J1, "compute_h_max");
    if (p < 1 || L < 1 || !(normV1 > 0.0)) {
        throw std::invalid_argument("compute_h_max: need p, L >= 1 and a positive weight norm");
    }
    const double Ld = static_cast<double>(L);
    const double unclamped = std::pow(Ld, Ld / 2.0 - 3.0) * log_inv(J1) /
                             (24.0 * std::sqrt(static_cast<double>(p)) * std::pow(normV1, Ld));
    return std::min(unclamped, 1.0);
}

/// log^(2/L)(1/J1)
inline double log_power_two_over_L(const LossValue& J1, std::size_t L) {
    return std::pow(log_inv(J1), 2.0 / static_cast<double>(L));
}

struct AlphaMax {
    double smoothness_term = 0.0;  // h / (1024 (L+1)^2 p J1 ||V1||^(3L+5))
    double rate_term = 0.0;        // (L+1/2) ||V1||^2 / (2 L (L+3/4)^2 J1 log^(2/L)(1/J1))
    double value = 0.0;
};

/// Both terms without the h <= h_max precondition; used when a run reports
/// (rather than rejects) an out-of-range h.
inline AlphaMax alpha_max_terms_unchecked(double h, const LossValue& J1, std::size_t p, std::size_t L,
                                          double normV1) {
    require_log_loss_below_one(J1, "compute_alpha_max");
    if (!(h > 0.0)) {
        throw std::invalid_argument("compute_alpha_max: h must be positive");
    }
    const double Ld = static_cast<double>(L);
    const double pd = static_cast<double>(p);
    AlphaMax a;
    a.smoothness_term =
        h / (1024.0 * (Ld + 1.0) * (Ld + 1.0) * pd * J1.value * std::pow(normV1, 3.0 * Ld + 5.0));
    a.rate_term = (Ld + 0.5) * normV1 * normV1 /
                  (2.0 * Ld * (Ld + 0.75) * (Ld + 0.75) * J1.value * log_power_two_over_L(J1, L));
    a.value = std::min(a.smoothness_term, a.rate_term);
    return a;
}

inline AlphaMax compute_alpha_max_terms(double h, const LossValue& J1, std::size_t p, std::size_t L,
                                        double normV1) {
    const double h_max = compute_h_max(J1, p, L, normV1);
    if (h > h_max * (1.0 + 1e-12)) {
        throw std::invalid_argument("compute_alpha_max: h exceeds h_max");
    }
    return alpha_max_terms_unchecked(h, J1, p, L, normV1);
}

inline double compute_alpha_max(double h, const LossValue& J1, std::size_t p, std::size_t L, double normV1) {
    return compute_alpha_max_terms(h, J1, p, L, normV1).value;
}

/// Largest admissible rate constant for step size alpha.
inline double compute_q_tilde(double alpha, const LossValue& J1, std::size_t L, double normV1) {
    require_log_loss_below_one(J1, "compute_q_tilde");
    if (!(alpha > 0.0)) {
        throw std::invalid_argument("compute_q_tilde: alpha must be positive");
    }
    const double Ld = static_cast<double>(L);
    return Ld * (Ld + 0.75) * (Ld + 0.75) * alpha * J1.value * log_power_two_over_L(J1, L) /
           ((Ld + 0.5) * normV1 * normV1);
}

/// Gradient-norm floor at small loss: (L+3/4) J log(1/J) / ||V||.
inline double grad_lower_bound(const LossValue& J, double normV, std::size_t L) {
    if (!(J.value > 0.0)) {
        throw std::invalid_argument("grad_lower_bound: loss must be positive");
    }
    return (static_cast<double>(L) + 0.75) * J.value * log_inv(J) / normV;
}

/// sqrt((L+1)p) ||V||^(L+1) min{J, 1}; meaningful when ||V|| >= sqrt(L+1/2).
inline double grad_upper_bound(const LossValue& J, double normV, std::size_t p, std::size_t L) {
    const double Ld = static_cast<double>(L);
    return std::sqrt((Ld + 1.0) * static_cast<double>(p)) * std::pow(normV, Ld + 1.0) *
           std::min(J.value, 1.0);
}

inline bool large_weight_regime(double normV, std::size_t L) {
    return normV >= std::sqrt(static_cast<double>(L) + 0.5);
}

/// 256 (L+1) sqrt(p) ||V||^(3L+5) J / h
inline double smoothness_bound(const LossValue& J, double normV, std::size_t p, std::size_t L, double h) {
    if (!(h > 0.0)) {
        throw std::invalid_argument("smoothness_bound: h must be positive");
    }
    const double Ld = static_cast<double>(L);
    return 256.0 * (Ld + 1.0) * std::sqrt(static_cast<double>(p)) * std::pow(normV, 3.0 * Ld + 5.0) *
           J.value / h;
}

/// Any V with J(V) <= 2 / n^(1+24L) has ||V|| above this.
inline double weight_norm_floor(std::size_t L) {
    if (L < 1) {
        throw std::invalid_argument("weight_norm_floor: L must be at least 1");
    }
    return std::sqrt(static_cast<double>(L) + 1.0);
}

/// Step-size ceiling on alpha*J_t; `root_p` selects sqrt(p) in place of p.
inline double step_ceiling(double h, double normV, std::size_t p, std::size_t L, bool root_p) {
    const double Ld = static_cast<double>(L);
    const double pf = root_p ? std::sqrt(static_cast<double>(p)) : static_cast<double>(p);
    return h / (1024.0 * (Ld + 1.0) * (Ld + 1.0) * pf * std::pow(normV, 3.0 * Ld + 5.0));
}

struct TheoryInputs {
    LossValue J1;
    std::size_t p = 0;
    std::size_t L = 0;
    double normV1 = 0.0;
    std::size_t n = 0;
};

struct TheoryConstants {
    TheoryInputs inputs;
    double h_max = 0.0;
    AlphaMax alpha_max;
    /// Resolved run choices.
    double h = 0.0;
    double alpha = 0.0;
    double q_tilde = 0.0;  // at the chosen alpha
    double Q = 0.0;
};

/// Fills every constant for a run with smoothing h, step alpha and rate Q (Q <= 0 means Q~(alpha)).
inline TheoryConstants make_constants(const TheoryInputs& in, double h, double alpha, double Q = 0.0) {
    TheoryConstants c;
    c.inputs = in;
    c.h_max = compute_h_max(in.J1, in.p, in.L, in.normV1);
    c.h = h;
    c.alpha_max = alpha_max_terms_unchecked(h, in.J1, in.p, in.L, in.normV1);
    c.alpha = alpha;
    c.q_tilde = compute_q_tilde(alpha, in.J1, in.L, in.normV1);
    c.Q = Q > 0.0 ? Q : c.q_tilde;
    return c;
}

enum class Verdict { Pass, Fail, NotApplicable };

inline std::string_view to_string(Verdict v) {
    switch (v) {
        case Verdict::Pass:
            return "1";
        case Verdict::Fail:
            return "0";
        default:
            return "na";
    }
}

/// Outcome of one inequality at one step. `slack` is normalized by the
/// check's scale, positive means satisfied; it is NaN when not applicable.
struct Check {
    Verdict verdict = Verdict::NotApplicable;
    double slack = std::numeric_limits<double>::quiet_NaN();
};

/// Relative tolerances applied to each normalized slack.
struct Tolerances {
    double i1 = 1e-15;
    double i1_log = 1e-12;
    double i2 = 1e-12;
    double i3 = 1e-12;
    double descent = 1e-12;
    double grad_lower = 1e-12;
    double alignment = 1e-12;
    double grad_upper = 1e-10;
};

inline Check evaluate_check(bool applicable, double slack, double scale, double tol) {
    Check c;
    if (!applicable) {
        return c;
    }
    c.slack = slack / scale;
    c.verdict = c.slack >= -tol ? Verdict::Pass : Verdict::Fail;
    return c;
}

/// Measured quantities at one iterate.
struct StepState {
    std::size_t t = 1;
    LossValue J;
    double grad_norm = 0.0;
    double weight_norm = 0.0;
    /// -grad J . V
    double alignment = 0.0;
};

inline StepState measure_state(std::size_t t, const WeightStack& V, const Evaluation& ev) {
    StepState s;
    s.t = t;
    s.J = ev.loss;
    s.grad_norm = frobenius_norm(ev.gradient);
    s.weight_norm = frobenius_norm(V);
    s.alignment = -stack_dot(ev.gradient, V);
    return s;
}

struct StepRecord {
    std::size_t t = 0;
    int phase = 1;
    LossValue J;
    double grad_norm = 0.0;
    double weight_norm = 0.0;
    double lower_bound = 0.0;
    double upper_bound = 0.0;
    double rate_bound = 0.0;
    double log_rate_bound = 0.0;
    double descent_lhs = std::numeric_limits<double>::quiet_NaN();  // J_{t+1}
    double descent_rhs = std::numeric_limits<double>::quiet_NaN();  // J_t - L alpha ||grad||^2 / (L+1/2)

    bool theorem_hypotheses = false;
    bool lower_preconditions = false;
    bool upper_preconditions = false;
    bool descent_preconditions = false;
    bool floor_preconditions = false;

    Check i1;
    Check i1_log;
    Check i2;
    Check i3;
    Check i3_root_p;
    Check descent;
    Check grad_lower;
    Check alignment;
    Check grad_upper;
    Check weight_floor;
};

/// Hypotheses that depend only on the starting point and h; the step size is
/// deliberately left out so oversized steps still get checked.
inline bool theorem_hypotheses_hold(const TheoryConstants& c) {
    const auto& in = c.inputs;
    return in.n >= 3 && in.J1.log_value < log_small_loss_threshold(in.n, in.L) && c.h < c.h_max && c.h <= 1.0;
}

/// Evaluates every monitored inequality for state `cur`; `next` feeds the descent check.
inline StepRecord monitor_transition(const StepState& cur, const std::optional<StepState>& next,
                                     const TheoryConstants& c, const Tolerances& tol = {}) {
    const auto& in = c.inputs;
    const std::size_t L = in.L;
    const double Ld = static_cast<double>(L);
    StepRecord r;
    r.t = cur.t;
    r.J = cur.J;
    r.grad_norm = cur.grad_norm;
    r.weight_norm = cur.weight_norm;
    r.lower_bound = grad_lower_bound(cur.J, cur.weight_norm, L);
    r.upper_bound = grad_upper_bound(cur.J, cur.weight_norm, in.p, L);
    const double steps = static_cast<double>(cur.t - 1);
    r.rate_bound = in.J1.value / (c.Q * steps + 1.0);
    r.log_rate_bound = in.J1.log_value - std::log1p(c.Q * steps);

    r.theorem_hypotheses = theorem_hypotheses_hold(c);
    const bool small_loss = cur.J.log_value < log_small_loss_threshold(in.n, L);

    r.i1 = evaluate_check(r.theorem_hypotheses, r.rate_bound - cur.J.value, in.J1.value, tol.i1);
    r.i1_log = evaluate_check(r.theorem_hypotheses, r.log_rate_bound - cur.J.log_value, 1.0, tol.i1_log);

    const double ratio1 = log_inv(in.J1) / std::pow(in.normV1, Ld);
    const double ratio = log_inv(cur.J) / std::pow(cur.weight_norm, Ld);
    r.i2 = evaluate_check(r.theorem_hypotheses, ratio - ratio1, ratio1, tol.i2);

    const double step_load = c.alpha * cur.J.value;
    const double ceil_p = step_ceiling(c.h, cur.weight_norm, in.p, L, false);
    const double ceil_root_p = step_ceiling(c.h, cur.weight_norm, in.p, L, true);
    r.i3 = evaluate_check(r.theorem_hypotheses, ceil_p - step_load, ceil_p, tol.i3);
    r.i3_root_p = evaluate_check(r.theorem_hypotheses, ceil_root_p - step_load, ceil_root_p, tol.i3);

    r.descent_preconditions = next.has_value() && c.h <= 1.0 && small_loss && step_load <= ceil_root_p;
    if (next) {
        r.descent_lhs = next->J.value;
        r.descent_rhs = cur.J.value - Ld * c.alpha * cur.grad_norm * cur.grad_norm / (Ld + 0.5);
    }
    r.descent = evaluate_check(r.descent_preconditions, r.descent_rhs - r.descent_lhs, cur.J.value, tol.descent);

    r.lower_preconditions = c.h <= c.h_max && small_loss && ratio >= ratio1 * (1.0 - tol.i2);
    r.grad_lower = evaluate_check(r.lower_preconditions, cur.grad_norm - r.lower_bound, r.lower_bound, tol.grad_lower);
    const double aligned_floor = cur.weight_norm * r.lower_bound;
    r.alignment = evaluate_check(r.lower_preconditions, cur.alignment - aligned_floor, aligned_floor, tol.alignment);

    r.upper_preconditions = large_weight_regime(cur.weight_norm, L);
    r.grad_upper = evaluate_check(r.upper_preconditions, r.upper_bound - cur.grad_norm, r.upper_bound, tol.grad_upper);

    r.floor_preconditions = cur.J.log_value < std::log(2.0) + log_small_loss_threshold(in.n, L);
    const double floor = weight_norm_floor(L);
    r.weight_floor.verdict = Verdict::NotApplicable;
    if (r.floor_preconditions) {
        r.weight_floor.slack = (cur.weight_norm - floor) / floor;
        r.weight_floor.verdict = cur.weight_norm > floor ? Verdict::Pass : Verdict::Fail;
    }
    return r;
}

/// Monitor for iterates outside the small-loss regime (first phase of the
/// two-phase schedule): only the hypothesis-free checks are evaluated.
inline StepRecord monitor_unconstrained(const StepState& cur, std::size_t p, std::size_t L, std::size_t n,
                                        const Tolerances& tol = {}) {
    StepRecord r;
    r.t = cur.t;
    r.J = cur.J;
    r.grad_norm = cur.grad_norm;
    r.weight_norm = cur.weight_norm;
    r.lower_bound = grad_lower_bound(cur.J, cur.weight_norm, L);
    r.upper_bound = grad_upper_bound(cur.J, cur.weight_norm, p, L);
    r.rate_bound = std::numeric_limits<double>::quiet_NaN();
    r.log_rate_bound = std::numeric_limits<double>::quiet_NaN();
    r.upper_preconditions = large_weight_regime(cur.weight_norm, L);
    r.grad_upper = evaluate_check(r.upper_preconditions, r.upper_bound - cur.grad_norm, r.upper_bound, tol.grad_upper);
    r.floor_preconditions = cur.J.log_value < std::log(2.0) + log_small_loss_threshold(n, L);
    if (r.floor_preconditions) {
        const double floor = weight_norm_floor(L);
        r.weight_floor.slack = (cur.weight_norm - floor) / floor;
        r.weight_floor.verdict = cur.weight_norm > floor ? Verdict::Pass : Verdict::Fail;
    }
    return r;
}

/// max{ ||A||^(L+1) / (L+1)^((L+1)/2), ||A|| }, the cap on products of layer operator norms.
inline double layer_product_cap(double normA, std::size_t L) {
    const double k = static_cast<double>(L) + 1.0;
    return std::max(std::pow(normA, k) / std::pow(k, k / 2.0), normA);
}

/// Largest product of operator norms over contiguous runs of layers.
inline double max_contiguous_operator_product(const WeightStack& A, const PowerIterationOptions& opt = {}) {
    std::vector<double> ops;
    for (std::size_t k = 0; k < A.num_layers(); ++k) {
        ops.push_back(operator_norm(A.layer(k), opt).value);
    }
    double best = 0.0;
    for (std::size_t i = 0; i < ops.size(); ++i) {
        double prod = 1.0;
        for (std::size_t j = i; j < ops.size(); ++j) {
            prod *= ops[j];
            best = std::max(best, prod);
        }
    }
    return best;
}

/// Names of the monitored checks, in summary order.
inline const std::vector<std::string>& invariant_names() {
    static const std::vector<std::string> names{"i1",          "i1_log",    "i2",         "i3",
                                                "i3_root_p",   "descent",   "grad_lower", "alignment",
                                                "grad_upper",  "weight_floor"};
    return names;
}

inline const Check& check_by_name(const StepRecord& r, std::string_view name) {
    if (name == "i1") return r.i1;
    if (name == "i1_log") return r.i1_log;
    if (name == "i2") return r.i2;
    if (name == "i3") return r.i3;
    if (name == "i3_root_p") return r.i3_root_p;
    if (name == "descent") return r.descent;
    if (name == "grad_lower") return r.grad_lower;
    if (name == "alignment") return r.alignment;
    if (name == "grad_upper") return r.grad_upper;
    if (name == "weight_floor") return r.weight_floor;
    throw std::invalid_argument("unknown check '" + std::string(name) + "'");
}

/// Whether a failing check makes the run fail. The sqrt(p) variant of I3 is
/// reported alongside the p variant but does not gate the exit status.
inline bool gates_exit_status(std::string_view name) { return name != "i3_root_p"; }

struct InvariantVerdict {
    std::string name;
    double worst_slack = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> first_violation;
    std::size_t evaluated = 0;
    std::size_t not_applicable = 0;
    std::size_t failures = 0;
};

inline std::vector<InvariantVerdict> summarize(const std::vector<StepRecord>& records) {
    std::vector<InvariantVerdict> out;
    for (const auto& name : invariant_names()) {
        InvariantVerdict v;
        v.name = name;
        for (const auto& r : records) {
            const Check& c = check_by_name(r, name);
            if (c.verdict == Verdict::NotApplicable) {
                ++v.not_applicable;
                continue;
            }
            ++v.evaluated;
            v.worst_slack = std::min(v.worst_slack, c.slack);
            if (c.verdict == Verdict::Fail) {
                ++v.failures;
                if (!v.first_violation) {
                    v.first_violation = r.t;
                }
            }
        }
        out.push_back(std::move(v));
    }
    return out;
}

inline bool any_gating_failure(const std::vector<InvariantVerdict>& verdicts) {
    for (const auto& v : verdicts) {
        if (v.failures > 0 && gates_exit_status(v.name)) {
            return true;
        }
    }
    return false;
}

/// Random stack with every layer of Frobenius norm `radius * U^(1/2)`; U uniform.
inline WeightStack random_perturbation(std::size_t p, std::size_t L, double radius, std::mt19937_64& rng,
                                       bool per_layer_ball = false) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    WeightStack d = WeightStack::zeros(p, L);
    for (std::size_t k = 0; k < d.num_layers(); ++k) {
        for (double& v : d.layer(k).data()) {
            v = gauss(rng);
        }
        if (per_layer_ball) {
            const double nk = frobenius_norm(d.layer(k));
            const double r = radius * std::sqrt(unif(rng));
            for (double& v : d.layer(k).data()) {
                v *= r / nk;
            }
        }
    }
    if (!per_layer_ball) {
        const double nd = frobenius_norm(d);
        const double r = radius * std::sqrt(unif(rng));
        d = stack_scale(d, r / nd);
    }
    return d;
}

/// ||grad J(A) - grad J(B)|| / ||A - B||; identical points are rejected.
inline double gradient_difference_quotient(const WeightStack& A, const WeightStack& B, const Activation& act,
                                           const Dataset& data) {
    const double dist = frobenius_norm(stack_axpy(A, -1.0, B));
    if (!(dist > 0.0)) {
        throw std::invalid_argument("gradient_difference_quotient: probe points coincide");
    }
    const WeightStack gA = gradient(A, act, data);
    const WeightStack gB = gradient(B, act, data);
    return frobenius_norm(stack_axpy(gA, -1.0, gB)) / dist;
}

/// Lower estimate of Lip(grad J) near V from k seeded point pairs in the ball of `radius`.
inline double probe_local_lipschitz(const WeightStack& V, const Activation& act, const Dataset& data, double radius,
                                    std::size_t k, std::uint64_t seed) {
    if (!(radius > 0.0) || k < 2) {
        throw std::invalid_argument("probe_local_lipschitz: need radius > 0 and k >= 2");
    }
    std::mt19937_64 rng(seed);
    double best = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const WeightStack A = stack_axpy(V, 1.0, random_perturbation(V.width(), V.depth(), radius, rng));
        const WeightStack B = stack_axpy(V, 1.0, random_perturbation(V.width(), V.depth(), radius, rng));
        if (A == B) {
            continue;
        }
        best = std::max(best, gradient_difference_quotient(A, B, act, data));
    }
    return best;
}

}  // namespace boundbench

#endif  // BOUNDBENCH_BOUNDS_HPP
