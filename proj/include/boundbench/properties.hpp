#ifndef BOUNDBENCH_PROPERTIES_HPP
#define BOUNDBENCH_PROPERTIES_HPP

// Randomized property checks shared by the property_suite run mode and the
// test suites. Each returns a tally with the worst normalized slack.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "boundbench/activations.hpp"
#include "boundbench/bounds.hpp"
#include "boundbench/linalg.hpp"
#include "boundbench/network.hpp"
#include "boundbench/ntk.hpp"

namespace boundbench {

struct PropertyTally {
    std::string name;
    std::size_t instances = 0;
    std::size_t failures = 0;
    /// Normalized slack; positive means satisfied.
    double worst_slack = std::numeric_limits<double>::infinity();
    double tolerance = 0.0;

    void record(double slack) {
        ++instances;
        worst_slack = std::min(worst_slack, slack);
        if (!(slack >= -tolerance)) {
            ++failures;
        }
    }
    bool pass() const { return failures == 0 && instances > 0; }
};

struct RandomInstance {
    WeightStack V;
    Dataset data;
    Activation act;
};

/// Sizes drawn uniformly from [1, max_p] x [1, max_L] x [1, max_n]; both labels
/// appear when n >= 2. Gaussian entries with std `scale / sqrt(p)`.
inline RandomInstance random_instance(std::mt19937_64& rng, std::size_t max_p, std::size_t max_L, std::size_t max_n,
                                      ActivationKind kind, double h, double scale = 1.0, std::size_t min_p = 1) {
    std::uniform_int_distribution<std::size_t> pd(min_p, max_p);
    std::uniform_int_distribution<std::size_t> ld(1, max_L);
    std::uniform_int_distribution<std::size_t> nd(1, max_n);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t p = pd(rng);
    const std::size_t L = ld(rng);
    const std::size_t n = nd(rng);
    WeightStack V = WeightStack::zeros(p, L);
    const double sd = scale / std::sqrt(static_cast<double>(p));
    for (std::size_t k = 0; k < V.num_layers(); ++k) {
        for (double& v : V.layer(k).data()) {
            v = sd * gauss(rng);
        }
    }
    std::vector<Vector> xs;
    std::vector<int> ys;
    for (std::size_t s = 0; s < n; ++s) {
        Vector x(p);
        for (double& v : x) {
            v = gauss(rng);
        }
        if (norm2(x) == 0.0) {
            x[0] = 1.0;
        }
        xs.push_back(std::move(x));
        ys.push_back(s % 2 == 0 ? 1 : -1);
    }
    return RandomInstance{std::move(V), Dataset(std::move(xs), std::move(ys)), Activation(kind, h)};
}

/// Rescales V to a collective norm drawn uniformly from [sqrt(L+1/2), factor * sqrt(L+1)].
inline WeightStack rescale_large(const WeightStack& V, std::mt19937_64& rng, double factor = 2.0) {
    const double lo = std::sqrt(static_cast<double>(V.depth()) + 0.5);
    const double hi = factor * std::sqrt(static_cast<double>(V.depth()) + 1.0);
    std::uniform_real_distribution<double> u(lo, hi);
    return stack_scale(V, u(rng) / frobenius_norm(V));
}

/// ||grad J|| <= sqrt((L+1)p) ||V||^(L+1) min{J,1} on random large-norm instances.
inline PropertyTally check_gradient_upper_bound(std::size_t instances, std::uint64_t seed, std::size_t max_p = 6,
                                                std::size_t max_L = 3, double tol = 1e-10) {
    PropertyTally t{"grad_upper", 0, 0, std::numeric_limits<double>::infinity(), tol};
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> hd(0.05, 1.0);
    for (std::size_t i = 0; i < instances; ++i) {
        const ActivationKind kind = i % 2 == 0 ? ActivationKind::HuberizedReLU : ActivationKind::ScaledSwish;
        RandomInstance inst = random_instance(rng, max_p, max_L, 4, kind, hd(rng));
        inst.V = rescale_large(inst.V, rng);
        const Evaluation ev = evaluate(inst.V, inst.act, inst.data);
        const double bound = grad_upper_bound(ev.loss, frobenius_norm(inst.V), inst.V.width(), inst.V.depth());
        t.record((bound - frobenius_norm(ev.gradient)) / bound);
    }
    return t;
}

/// Contiguous products of layer operator norms against the collective-norm cap.
inline PropertyTally check_product_bound(std::size_t instances, std::uint64_t seed, std::size_t max_p = 6,
                                         std::size_t max_L = 3, double tol = 1e-10) {
    PropertyTally t{"product_bound", 0, 0, std::numeric_limits<double>::infinity(), tol};
    std::mt19937_64 rng(seed);
    const PowerIterationOptions opt{1e-13, 100'000, 0x5eed};
    for (std::size_t i = 0; i < instances; ++i) {
        RandomInstance inst = random_instance(rng, max_p, max_L, 1, ActivationKind::HuberizedReLU, 1.0, 1.0, 2);
        const WeightStack A = rescale_large(inst.V, rng);
        const double cap = layer_product_cap(frobenius_norm(A), A.depth());
        t.record((cap - max_contiguous_operator_product(A, opt)) / cap);
    }
    return t;
}

/// g_s <= J_s at random points, including large margins of either sign.
inline PropertyTally check_weight_below_loss(std::size_t instances, std::uint64_t seed) {
    PropertyTally t{"g_below_loss", 0, 0, std::numeric_limits<double>::infinity(), 0.0};
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> zd(-60.0, 60.0);
    for (std::size_t i = 0; i < instances; ++i) {
        const double z = zd(rng);
        const double J = logistic_loss(z).value;
        t.record(J - logistic_weight(z));
    }
    return t;
}

/// ||phi(v1) - phi(v2)|| <= ||v1 - v2||, checked as an absolute slack.
inline PropertyTally check_contractivity(const Activation& act, std::size_t pairs, std::uint64_t seed,
                                         std::size_t dim = 16, double tol = 1e-12) {
    PropertyTally t{"contractivity_" + std::string(to_string(act.kind())), 0, 0,
                    std::numeric_limits<double>::infinity(), tol};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> sc(-3.0, 1.0);
    for (std::size_t i = 0; i < pairs; ++i) {
        const double scale = std::pow(10.0, sc(rng)) * act.h() * 10.0;
        Vector a(dim);
        Vector b(dim);
        for (std::size_t k = 0; k < dim; ++k) {
            a[k] = scale * gauss(rng);
            b[k] = a[k] + scale * std::pow(10.0, sc(rng)) * gauss(rng);
        }
        const Vector fa = apply_entrywise(act, a);
        const Vector fb = apply_entrywise(act, b);
        double din = 0.0;
        double dout = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            din += (a[k] - b[k]) * (a[k] - b[k]);
            dout += (fa[k] - fb[k]) * (fa[k] - fb[k]);
        }
        t.record(std::sqrt(din) - std::sqrt(dout));
    }
    return t;
}

/// |f_V(x)| <= prod_j ||V_j||_op.
inline PropertyTally check_output_lipschitz_chain(std::size_t instances, std::uint64_t seed, std::size_t max_p = 6,
                                                  std::size_t max_L = 3, double tol = 1e-10) {
    PropertyTally t{"output_chain", 0, 0, std::numeric_limits<double>::infinity(), tol};
    std::mt19937_64 rng(seed);
    const PowerIterationOptions opt{1e-13, 100'000, 0x5eed};
    for (std::size_t i = 0; i < instances; ++i) {
        const ActivationKind kind = i % 2 == 0 ? ActivationKind::HuberizedReLU : ActivationKind::ScaledSwish;
        RandomInstance inst = random_instance(rng, max_p, max_L, 1, kind, 0.5, 2.0);
        double prod = 1.0;
        for (std::size_t k = 0; k < inst.V.num_layers(); ++k) {
            prod *= operator_norm(inst.V.layer(k), opt).value;
        }
        const double f = network_output(inst.V, inst.act, inst.data.input(0));
        t.record(prod > 0.0 ? (prod - std::abs(f)) / prod : -std::abs(f));
    }
    return t;
}

/// Definition-of-smoothness certification at each h, for both kinds.
inline std::vector<PropertyTally> check_certifications(const std::vector<double>& hs) {
    std::vector<PropertyTally> out;
    for (ActivationKind kind : {ActivationKind::HuberizedReLU, ActivationKind::ScaledSwish}) {
        PropertyTally t{"certify_" + std::string(to_string(kind)), 0, 0, std::numeric_limits<double>::infinity(),
                        0.0};
        for (double h : hs) {
            const SmoothnessReport r = certify_h_smooth(Activation(kind, h));
            t.record(r.pass ? 0.0 : -1.0);
        }
        out.push_back(t);
    }
    return out;
}

}  // namespace boundbench

#endif  // BOUNDBENCH_PROPERTIES_HPP
