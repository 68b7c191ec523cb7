#ifndef BOUNDBENCH_ACTIVATIONS_HPP
#define BOUNDBENCH_ACTIVATIONS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace boundbench {

enum class ActivationKind { HuberizedReLU, ScaledSwish };

inline std::string_view to_string(ActivationKind k) {
    return k == ActivationKind::HuberizedReLU ? "huberized" : "swish";
}

inline ActivationKind parse_activation_kind(std::string_view s) {
    if (s == "huberized" || s == "huberized_relu") {
        return ActivationKind::HuberizedReLU;
    }
    if (s == "swish" || s == "scaled_swish") {
        return ActivationKind::ScaledSwish;
    }
    throw std::invalid_argument("unknown activation kind '" + std::string(s) + "'");
}

/// Smoothed ReLU with smoothing width h > 0.
class Activation {
  public:
    Activation(ActivationKind kind, double h) : kind_(kind), h_(h) {
        if (!(h > 0.0) || !std::isfinite(h)) {
            throw std::invalid_argument("Activation: smoothing width h must be positive and finite");
        }
    }

    ActivationKind kind() const { return kind_; }
    double h() const { return h_; }

    double value(double z) const {
        if (kind_ == ActivationKind::HuberizedReLU) {
            if (z < 0.0) {
                return 0.0;
            }
            if (z <= h_) {
                return z * z / (2.0 * h_);
            }
            return z - h_ / 2.0;
        }
        const double a = 2.0 * z / h_;
        if (a < -kSwishExpGuard) {
            return 0.0;
        }
        if (a > kSwishExpGuard) {
            return z / kSwishScale;
        }
        return z * logistic(a) / kSwishScale;
    }

    double deriv(double z) const {
        if (kind_ == ActivationKind::HuberizedReLU) {
            if (z < 0.0) {
                return 0.0;
            }
            if (z <= h_) {
                return z / h_;
            }
            return 1.0;
        }
        const double a = 2.0 * z / h_;
        if (a < -kSwishExpGuard) {
            return 0.0;
        }
        if (a > kSwishExpGuard) {
            return 1.0 / kSwishScale;
        }
        const double s = logistic(a);
        return (s + a * s * (1.0 - s)) / kSwishScale;
    }

    friend bool operator==(const Activation&, const Activation&) = default;

    static constexpr double kSwishScale = 1.1;
    static constexpr double kSwishExpGuard = 700.0;

  private:
    static double logistic(double a) {
        if (a >= 0.0) {
            return 1.0 / (1.0 + std::exp(-a));
        }
        const double e = std::exp(a);
        return e / (1.0 + e);
    }

    ActivationKind kind_;
    double h_;
};

/// Entrywise application.
inline std::vector<double> apply_entrywise(const Activation& act, std::span<const double> v) {
    std::vector<double> out(v.size());
    std::transform(v.begin(), v.end(), out.begin(), [&](double z) { return act.value(z); });
    return out;
}

struct SamplingGrid {
    /// Dense uniform block covers [-half_width_h * h, half_width_h * h].
    double half_width_h = 10.0;
    std::size_t points = 10'000;
    /// Extra symmetric points at these multiples of h.
    std::vector<double> tail_multiples_h{20.0, 50.0, 100.0, 1e3, 1e4, 1e6};
    /// Used verbatim instead of the generated grid when set.
    std::optional<std::vector<double>> explicit_points;
};

inline std::vector<double> grid_points(const SamplingGrid& grid, double h) {
    std::vector<double> pts;
    if (grid.explicit_points) {
        pts = *grid.explicit_points;
    } else {
        const double lo = -grid.half_width_h * h;
        const double hi = grid.half_width_h * h;
        if (grid.points >= 2) {
            pts.reserve(grid.points + 2 * grid.tail_multiples_h.size() + 1);
            for (std::size_t i = 0; i < grid.points; ++i) {
                pts.push_back(lo + (hi - lo) * static_cast<double>(i) /
                                       static_cast<double>(grid.points - 1));
            }
        } else if (grid.points == 1) {
            pts.push_back(0.0);
        }
        for (double m : grid.tail_multiples_h) {
            pts.push_back(m * h);
            pts.push_back(-m * h);
        }
        pts.push_back(0.0);
        pts.push_back(h);
    }
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    return pts;
}

struct SmoothnessReport {
    double value_at_zero = 0.0;
    double max_abs_deriv = 0.0;
    /// Largest |phi'(b) - phi'(a)| / (b - a) over adjacent grid points.
    double max_lipschitz_quotient = 0.0;
    /// Largest |phi'(z) z - phi(z)|.
    double max_taylor_gap = 0.0;
    double tol = 0.0;
    bool pass = false;
    std::size_t samples_used = 0;
};

inline constexpr double kCertifyTol = 1e-9;

/// Samples the h-smooth-ReLU properties (phi(0) = 0, |phi'| <= 1,
/// phi' 1/h-Lipschitz, |phi'(z) z - phi(z)| <= h/2) on a grid.
inline SmoothnessReport certify_h_smooth(const Activation& act, const SamplingGrid& grid = {},
                                         double tol = kCertifyTol) {
    const std::vector<double> pts = grid_points(grid, act.h());
    if (pts.size() < 2) {
        throw std::invalid_argument("certify_h_smooth: grid needs at least 2 distinct points");
    }
    SmoothnessReport r;
    r.tol = tol;
    r.samples_used = pts.size();
    r.value_at_zero = act.value(0.0);
    double prev_z = 0.0;
    double prev_d = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double z = pts[i];
        const double v = act.value(z);
        const double d = act.deriv(z);
        r.max_abs_deriv = std::max(r.max_abs_deriv, std::abs(d));
        r.max_taylor_gap = std::max(r.max_taylor_gap, std::abs(d * z - v));
        if (i > 0) {
            r.max_lipschitz_quotient =
                std::max(r.max_lipschitz_quotient, std::abs(d - prev_d) / (z - prev_z));
        }
        prev_z = z;
        prev_d = d;
    }
    const double h = act.h();
    r.pass = r.value_at_zero == 0.0 && r.max_abs_deriv <= 1.0 + tol &&
             r.max_lipschitz_quotient <= 1.0 / h + tol && r.max_taylor_gap <= h / 2.0 + tol;
    return r;
}

}  // namespace boundbench

#endif  // BOUNDBENCH_ACTIVATIONS_HPP
