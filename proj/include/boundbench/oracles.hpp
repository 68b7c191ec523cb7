#ifndef BOUNDBENCH_ORACLES_HPP
#define BOUNDBENCH_ORACLES_HPP

// Brute-force references used to check the fast paths. Nothing here shares
// code with the trace-based gradient.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "boundbench/activations.hpp"
#include "boundbench/linalg.hpp"
#include "boundbench/network.hpp"

namespace boundbench::oracle {

enum class FdScheme { Central };

struct FdConfig {
    double step = 1e-5;
    FdScheme scheme = FdScheme::Central;

    void validate() const {
        if (!(step >= 1e-8 && step <= 1e-3)) {
            throw std::invalid_argument("FdConfig: step must lie in [1e-8, 1e-3]");
        }
    }
};

/// f_V(x) by explicit index loops.
inline double naive_output(const WeightStack& V, const Activation& act, const Vector& x) {
    const std::size_t p = V.width();
    std::vector<double> cur = x;
    for (std::size_t l = 0; l < V.depth(); ++l) {
        std::vector<double> nxt(p, 0.0);
        for (std::size_t i = 0; i < p; ++i) {
            double u = 0.0;
            for (std::size_t j = 0; j < p; ++j) {
                u += V.layer(l)(i, j) * cur[j];
            }
            nxt[i] = act.value(u);
        }
        cur = std::move(nxt);
    }
    double f = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
        f += V.outer()(0, j) * cur[j];
    }
    return f;
}

/// Mean logistic loss with Kahan summation.
inline double compensated_loss(const WeightStack& V, const Activation& act, const Dataset& data) {
    double sum = 0.0;
    double carry = 0.0;
    for (std::size_t s = 0; s < data.size(); ++s) {
        const double z = data.label(s) * naive_output(V, act, data.input(s));
        const double term = z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
        const double y = term - carry;
        const double t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    return sum / static_cast<double>(data.size());
}

inline double naive_frobenius(const WeightStack& V) {
    double acc = 0.0;
    for (std::size_t k = 0; k < V.num_layers(); ++k) {
        const Matrix& m = V.layer(k);
        for (std::size_t i = 0; i < m.rows(); ++i) {
            for (std::size_t j = 0; j < m.cols(); ++j) {
                acc += m(i, j) * m(i, j);
            }
        }
    }
    return std::sqrt(acc);
}

inline std::vector<double> flatten(const WeightStack& V) {
    std::vector<double> out;
    out.reserve(V.num_parameters());
    for (std::size_t k = 0; k < V.num_layers(); ++k) {
        for (double v : V.layer(k).data()) {
            out.push_back(v);
        }
    }
    return out;
}

/// Central differences of the mean loss, one parameter at a time.
inline WeightStack fd_gradient(const WeightStack& V, const Activation& act, const Dataset& data,
                               const FdConfig& cfg = {}) {
    cfg.validate();
    WeightStack out = WeightStack::zeros(V.width(), V.depth());
    WeightStack probe = V;
    for (std::size_t k = 0; k < V.num_layers(); ++k) {
        auto entries = probe.layer(k).data();
        auto dst = out.layer(k).data();
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const double saved = entries[i];
            entries[i] = saved + cfg.step;
            const double up = compensated_loss(probe, act, data);
            entries[i] = saved - cfg.step;
            const double down = compensated_loss(probe, act, data);
            entries[i] = saved;
            dst[i] = (up - down) / (2.0 * cfg.step);
        }
    }
    return out;
}

struct FdReport {
    double max_error = 0.0;
    std::size_t layer = 0;
    std::size_t row = 0;
    std::size_t col = 0;
    std::size_t compared = 0;
    std::size_t excluded = 0;
    bool pass = true;
};

/// Per-entry |a-b| / max(|a|, |b|, abs_floor); entries with mask true are skipped.
inline FdReport fd_compare(const WeightStack& a, const WeightStack& b, double rel_tol, double abs_floor,
                           const std::vector<std::vector<bool>>* exclude = nullptr) {
    require_same_shape(a, b, "fd_compare");
    FdReport r;
    for (std::size_t k = 0; k < a.num_layers(); ++k) {
        const Matrix& ma = a.layer(k);
        const Matrix& mb = b.layer(k);
        for (std::size_t i = 0; i < ma.rows(); ++i) {
            for (std::size_t j = 0; j < ma.cols(); ++j) {
                if (exclude && (*exclude)[k][i * ma.cols() + j]) {
                    ++r.excluded;
                    continue;
                }
                const double x = ma(i, j);
                const double y = mb(i, j);
                const double denom = std::max({std::abs(x), std::abs(y), abs_floor});
                const double err = std::abs(x - y) / denom;
                ++r.compared;
                if (err > r.max_error) {
                    r.max_error = err;
                    r.layer = k;
                    r.row = i;
                    r.col = j;
                }
            }
        }
    }
    r.pass = r.max_error < rel_tol;
    return r;
}

struct KinkExclusion {
    /// mask[k][i*cols + j] is true when perturbing that entry may cross a kink.
    std::vector<std::vector<bool>> mask;
    std::size_t excluded = 0;
};

/// Entries whose central-difference stencil can straddle a Huberized kink
/// (some affected pre-activation within 10*step of 0 or h, for any sample).
/// Smooth activations never exclude anything.
inline KinkExclusion kink_exclusions(const WeightStack& V, const Activation& act, const Dataset& data,
                                     const FdConfig& cfg = {}) {
    KinkExclusion ex;
    const std::size_t L = V.depth();
    for (std::size_t k = 0; k < V.num_layers(); ++k) {
        ex.mask.emplace_back(V.layer(k).size(), false);
    }
    if (act.kind() != ActivationKind::HuberizedReLU) {
        return ex;
    }
    const double band = 10.0 * cfg.step;
    auto near_kink = [&](double u) { return std::abs(u) < band || std::abs(u - act.h()) < band; };
    // near_unit[l][i]: unit i of layer l is near a kink for some sample.
    std::vector<std::vector<bool>> near_unit(L, std::vector<bool>(V.width(), false));
    for (std::size_t s = 0; s < data.size(); ++s) {
        const ForwardTrace tr = forward(V, act, data.input(s));
        for (std::size_t l = 0; l < L; ++l) {
            for (std::size_t i = 0; i < V.width(); ++i) {
                if (near_kink(tr.u[l][i])) {
                    near_unit[l][i] = true;
                }
            }
        }
    }
    std::vector<bool> downstream_near(L + 1, false);
    for (std::size_t l = L; l-- > 0;) {
        bool any = false;
        for (bool b : near_unit[l]) {
            any = any || b;
        }
        downstream_near[l] = downstream_near[l + 1] || any;
    }
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t p = V.width();
        for (std::size_t i = 0; i < p; ++i) {
            const bool hit = near_unit[l][i] || downstream_near[l + 1];
            if (!hit) {
                continue;
            }
            for (std::size_t j = 0; j < p; ++j) {
                ex.mask[l][i * p + j] = true;
                ++ex.excluded;
            }
        }
    }
    return ex;
}

}  // namespace boundbench::oracle

#endif  // BOUNDBENCH_ORACLES_HPP
