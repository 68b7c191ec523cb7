#ifndef BOUNDBENCH_NETWORK_HPP
#define BOUNDBENCH_NETWORK_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "boundbench/activations.hpp"
#include "boundbench/linalg.hpp"
#include "boundbench/parallel.hpp"

namespace boundbench {

/// Unit-norm inputs with labels in {-1, +1}.
class Dataset {
  public:
    Dataset() = default;

    /// Inputs are rescaled to unit norm. Any input whose norm was off by more
    /// than 1e-6 is listed in `renormalized`.
    Dataset(std::vector<Vector> inputs, std::vector<int> labels) {
        if (inputs.size() != labels.size()) {
            throw std::invalid_argument("Dataset: inputs and labels differ in length");
        }
        if (!inputs.empty()) {
            width_ = inputs.front().size();
        }
        for (std::size_t s = 0; s < inputs.size(); ++s) {
            auto& x = inputs[s];
            if (x.size() != width_ || width_ == 0) {
                throw std::invalid_argument("Dataset: sample " + std::to_string(s) +
                                            " has the wrong dimension");
            }
            if (labels[s] != 1 && labels[s] != -1) {
                throw std::invalid_argument("Dataset: label of sample " + std::to_string(s) +
                                            " is not +1 or -1");
            }
            const double nx = norm2(x);
            if (!(nx > 0.0) || !std::isfinite(nx)) {
                throw std::invalid_argument("Dataset: sample " + std::to_string(s) +
                                            " has zero or non-finite norm");
            }
            if (std::abs(nx - 1.0) > 1e-6) {
                renormalized_.push_back(s);
            }
            if (nx != 1.0) {
                for (double& v : x) {
                    v /= nx;
                }
            }
        }
        inputs_ = std::move(inputs);
        labels_ = std::move(labels);
    }

    std::size_t size() const { return inputs_.size(); }
    bool empty() const { return inputs_.empty(); }
    std::size_t width() const { return width_; }
    const Vector& input(std::size_t s) const { return inputs_.at(s); }
    int label(std::size_t s) const { return labels_.at(s); }
    const std::vector<Vector>& inputs() const { return inputs_; }
    const std::vector<int>& labels() const { return labels_; }
    const std::vector<std::size_t>& renormalized() const { return renormalized_; }

  private:
    std::vector<Vector> inputs_;
    std::vector<int> labels_;
    std::size_t width_ = 0;
    std::vector<std::size_t> renormalized_;
};

inline nlohmann::json dataset_to_json(const Dataset& data) {
    nlohmann::json j;
    j["p"] = data.width();
    j["samples"] = nlohmann::json::array();
    for (std::size_t s = 0; s < data.size(); ++s) {
        j["samples"].push_back({{"x", data.input(s)}, {"y", data.label(s)}});
    }
    return j;
}

/// Parses {"p": int, "samples": [{"x": [...], "y": +-1}, ...]}.
inline Dataset dataset_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("p") || !j.contains("samples")) {
        throw std::invalid_argument("dataset: expected an object with keys \"p\" and \"samples\"");
    }
    for (const auto& [key, _] : j.items()) {
        if (key != "p" && key != "samples") {
            throw std::invalid_argument("dataset: unknown key \"" + key + "\"");
        }
    }
    if (!j["p"].is_number_integer() || j["p"].get<long long>() < 1) {
        throw std::invalid_argument("dataset.p: must be a positive integer");
    }
    const auto p = static_cast<std::size_t>(j["p"].get<long long>());
    std::vector<Vector> xs;
    std::vector<int> ys;
    std::size_t s = 0;
    for (const auto& item : j["samples"]) {
        const std::string where = "dataset.samples[" + std::to_string(s) + "]";
        if (!item.is_object() || !item.contains("x") || !item.contains("y")) {
            throw std::invalid_argument(where + ": expected {\"x\": [...], \"y\": +-1}");
        }
        auto x = item["x"].get<Vector>();
        if (x.size() != p) {
            throw std::invalid_argument(where + ".x: length differs from p");
        }
        const int y = item["y"].get<int>();
        if (y != 1 && y != -1) {
            throw std::invalid_argument(where + ".y: must be +1 or -1");
        }
        xs.push_back(std::move(x));
        ys.push_back(y);
        ++s;
    }
    if (xs.empty()) {
        throw std::invalid_argument("dataset.samples: must be nonempty");
    }
    return Dataset(std::move(xs), std::move(ys));
}

inline Dataset load_dataset_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open dataset file '" + path + "'");
    }
    return dataset_from_json(nlohmann::json::parse(in));
}

struct ForwardTrace {
    Vector input;
    std::vector<Vector> u;           // pre-activations, layers 1..L
    std::vector<Vector> x;           // post-activations, layers 1..L
    std::vector<Vector> sigma_diag;  // phi'(u_l)
    double output = 0.0;
};

inline ForwardTrace forward(const WeightStack& V, const Activation& act, std::span<const double> x) {
    if (x.size() != V.width()) {
        throw ShapeError("forward: input dimension differs from network width");
    }
    ForwardTrace tr;
    tr.input.assign(x.begin(), x.end());
    const std::size_t L = V.depth();
    tr.u.reserve(L);
    tr.x.reserve(L);
    tr.sigma_diag.reserve(L);
    for (std::size_t l = 0; l < L; ++l) {
        const Vector& prev = l == 0 ? tr.input : tr.x.back();
        Vector u = V.hidden(l).multiply(prev);
        Vector post(u.size());
        Vector sig(u.size());
        for (std::size_t i = 0; i < u.size(); ++i) {
            post[i] = act.value(u[i]);
            sig[i] = act.deriv(u[i]);
        }
        tr.u.push_back(std::move(u));
        tr.x.push_back(std::move(post));
        tr.sigma_diag.push_back(std::move(sig));
    }
    tr.output = dot(V.outer().data(), tr.x.back());
    return tr;
}

/// f_V(x) without keeping intermediate state.
inline double network_output(const WeightStack& V, const Activation& act, std::span<const double> x) {
    Vector h(x.begin(), x.end());
    for (std::size_t l = 0; l < V.depth(); ++l) {
        h = apply_entrywise(act, V.hidden(l).multiply(h));
    }
    return dot(V.outer().data(), h);
}

/// Loss with a parallel natural-log channel, so tiny losses keep full relative accuracy.
struct LossValue {
    double value = 0.0;
    double log_value = -std::numeric_limits<double>::infinity();
};

/// ln(1 + exp(-z)) for margin z = y f, evaluated without overflow.
inline LossValue logistic_loss(double margin) {
    const double z = margin;
    LossValue out;
    if (z >= 0.0) {
        out.value = std::log1p(std::exp(-z));
    } else {
        out.value = -z + std::log1p(std::exp(z));
    }
    if (z > 40.0) {
        // log(log1p(w)) = log(w) + log1p(-w/2 + O(w^2)) with w = exp(-z)
        out.log_value = -z + std::log1p(-0.5 * std::exp(-z));
    } else {
        out.log_value = std::log(out.value);
    }
    return out;
}

/// 1 / (1 + exp(z)), the per-sample gradient weight g_s at margin z = y f.
inline double logistic_weight(double margin) {
    if (margin >= 0.0) {
        const double e = std::exp(-margin);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(margin));
}

/// Samples per worker so that tiny networks are not split across threads.
inline std::size_t samples_per_worker(std::size_t p, std::size_t L) {
    return std::max<std::size_t>(1, 16384 / (p * p * L + 1));
}

/// Mean of per-sample losses in index order; log channel via log-sum-exp.
inline LossValue mean_loss(std::span<const LossValue> per_sample) {
    if (per_sample.empty()) {
        throw std::invalid_argument("mean_loss: no samples");
    }
    double sum = 0.0;
    double max_log = -std::numeric_limits<double>::infinity();
    for (const auto& l : per_sample) {
        sum += l.value;
        max_log = std::max(max_log, l.log_value);
    }
    const double n = static_cast<double>(per_sample.size());
    LossValue out;
    out.value = sum / n;
    if (std::isinf(max_log)) {
        out.log_value = max_log;
        return out;
    }
    double acc = 0.0;
    for (const auto& l : per_sample) {
        acc += std::exp(l.log_value - max_log);
    }
    out.log_value = max_log + std::log(acc) - std::log(n);
    return out;
}

inline void check_label(int y) {
    if (y != 1 && y != -1) {
        throw std::invalid_argument("label must be +1 or -1");
    }
}

inline LossValue sample_loss(const WeightStack& V, const Activation& act, std::span<const double> x, int y) {
    check_label(y);
    return logistic_loss(static_cast<double>(y) * network_output(V, act, x));
}

inline double g_factor(const WeightStack& V, const Activation& act, std::span<const double> x, int y) {
    check_label(y);
    return logistic_weight(static_cast<double>(y) * network_output(V, act, x));
}

inline LossValue total_loss(const WeightStack& V, const Activation& act, const Dataset& data) {
    if (data.empty()) {
        throw std::invalid_argument("total_loss: empty dataset");
    }
    std::vector<LossValue> per(data.size());
    parallel_for(
        data.size(),
        [&](std::size_t s) {
            per[s] = logistic_loss(static_cast<double>(data.label(s)) * network_output(V, act, data.input(s)));
        },
        samples_per_worker(V.width(), V.depth()));
    return mean_loss(per);
}

/// Gradient of f_V(x) with respect to every layer, kept in rank-one form:
/// the block for hidden layer l is left[l] * right[l]^T and the outer block is
/// the last hidden post-activation.
struct OutputGradient {
    std::vector<Vector> left;   // Sigma_l (prod V_j^T Sigma_j) V_{L+1}^T
    std::vector<Vector> right;  // x_{l-1}
    Vector outer;               // x_L

    std::size_t depth() const { return left.size(); }

    /// Frobenius norm of the block for layer k (k == depth() is the outer layer).
    double layer_norm(std::size_t k) const {
        if (k == depth()) {
            return norm2(outer);
        }
        return norm2(left.at(k)) * norm2(right.at(k));
    }

    double norm() const {
        double acc = 0.0;
        for (std::size_t k = 0; k <= depth(); ++k) {
            const double n = layer_norm(k);
            acc += n * n;
        }
        return std::sqrt(acc);
    }

    /// Element-wise product with a full stack.
    double dot(const WeightStack& W) const {
        if (W.depth() != depth() || W.width() != outer.size()) {
            throw ShapeError("OutputGradient::dot: shape mismatch");
        }
        double acc = 0.0;
        for (std::size_t l = 0; l < depth(); ++l) {
            const Matrix& m = W.hidden(l);
            const Vector& a = left[l];
            const Vector& b = right[l];
            for (std::size_t i = 0; i < m.rows(); ++i) {
                if (a[i] == 0.0) {
                    continue;
                }
                acc += a[i] * boundbench::dot(m.row(i), b);
            }
        }
        acc += boundbench::dot(W.outer().data(), outer);
        return acc;
    }

    WeightStack dense() const {
        const std::size_t p = outer.size();
        WeightStack out = WeightStack::zeros(p, depth());
        for (std::size_t l = 0; l < depth(); ++l) {
            Matrix& m = out.layer(l);
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t j = 0; j < p; ++j) {
                    m(i, j) = left[l][i] * right[l][j];
                }
            }
        }
        for (std::size_t j = 0; j < p; ++j) {
            out.outer()(0, j) = outer[j];
        }
        return out;
    }
};

/// Reverse accumulation over a stored trace.
inline OutputGradient output_gradient(const WeightStack& V, const ForwardTrace& tr) {
    const std::size_t L = V.depth();
    OutputGradient g;
    g.left.resize(L);
    g.right.resize(L);
    g.outer = tr.x.back();
    Vector back(V.outer().data().begin(), V.outer().data().end());
    for (std::size_t l = L; l-- > 0;) {
        Vector d(back.size());
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i] = tr.sigma_diag[l][i] * back[i];
        }
        g.right[l] = l == 0 ? tr.input : tr.x[l - 1];
        if (l > 0) {
            back = V.hidden(l).multiply_transposed(d);
        }
        g.left[l] = std::move(d);
    }
    return g;
}

inline OutputGradient output_gradient(const WeightStack& V, const Activation& act, std::span<const double> x) {
    return output_gradient(V, forward(V, act, x));
}

/// sum_s coeff[s] * grads[s], accumulated in index order for every entry, then scaled.
inline WeightStack combine_gradients(std::span<const OutputGradient> grads, std::span<const double> coeff,
                                     double scale, std::size_t p, std::size_t L) {
    WeightStack out = WeightStack::zeros(p, L);
    const std::size_t n = grads.size();
    for (std::size_t l = 0; l < L; ++l) {
        Matrix& m = out.layer(l);
        parallel_for(
            p,
            [&](std::size_t i) {
                for (std::size_t j = 0; j < p; ++j) {
                    double acc = 0.0;
                    for (std::size_t s = 0; s < n; ++s) {
                        acc += coeff[s] * grads[s].left[l][i] * grads[s].right[l][j];
                    }
                    m(i, j) = acc * scale;
                }
            },
            64);
    }
    for (std::size_t j = 0; j < p; ++j) {
        double acc = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            acc += coeff[s] * grads[s].outer[j];
        }
        out.outer()(0, j) = acc * scale;
    }
    return out;
}

/// Everything one gradient evaluation produces; monitors need the per-sample parts.
struct Evaluation {
    LossValue loss;
    std::vector<LossValue> sample_losses;
    std::vector<double> outputs;
    std::vector<double> g;
    WeightStack gradient;
};

inline Evaluation evaluate(const WeightStack& V, const Activation& act, const Dataset& data) {
    if (data.empty()) {
        throw std::invalid_argument("evaluate: empty dataset");
    }
    if (data.width() != V.width()) {
        throw ShapeError("evaluate: dataset width differs from network width");
    }
    const std::size_t n = data.size();
    Evaluation ev;
    ev.sample_losses.resize(n);
    ev.outputs.resize(n);
    ev.g.resize(n);
    std::vector<OutputGradient> grads(n);
    std::vector<double> coeff(n);
    parallel_for(n, [&](std::size_t s) {
        ForwardTrace tr = forward(V, act, data.input(s));
        const double y = static_cast<double>(data.label(s));
        ev.outputs[s] = tr.output;
        ev.sample_losses[s] = logistic_loss(y * tr.output);
        ev.g[s] = logistic_weight(y * tr.output);
        coeff[s] = -y * ev.g[s];
        grads[s] = output_gradient(V, tr);
    }, samples_per_worker(V.width(), V.depth()));
    ev.loss = mean_loss(ev.sample_losses);
    ev.gradient = combine_gradients(grads, coeff, 1.0 / static_cast<double>(n), V.width(), V.depth());
    return ev;
}

inline WeightStack gradient(const WeightStack& V, const Activation& act, const Dataset& data) {
    return evaluate(V, act, data).gradient;
}

inline WeightStack gd_step(const WeightStack& V, double alpha, const WeightStack& grad) {
    if (!(alpha > 0.0)) {
        throw std::invalid_argument("gd_step: step size must be positive");
    }
    return stack_axpy(V, -alpha, grad);
}

}  // namespace boundbench

#endif  // BOUNDBENCH_NETWORK_HPP
