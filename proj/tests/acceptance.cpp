#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "boundbench/harness.hpp"
#include "boundbench/oracles.hpp"
#include "boundbench/properties.hpp"

using namespace boundbench;

namespace {

const std::string kConfigDir = BOUNDBENCH_CONFIG_DIR;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) { return format_double(v); }

struct Runs {
    RunLog l1;
    RunLog l2;
    double l1_seconds = 0.0;
    double l2_seconds = 0.0;
};

const Runs& theorem31_runs() {
    static const Runs runs = [] {
        Runs r;
        auto t0 = std::chrono::steady_clock::now();
        r.l1 = execute(load_config(kConfigDir + "/theorem31_L1.json"));
        r.l1_seconds = seconds_since(t0);
        t0 = std::chrono::steady_clock::now();
        r.l2 = execute(load_config(kConfigDir + "/theorem31_L2.json"));
        r.l2_seconds = seconds_since(t0);
        return r;
    }();
    return runs;
}

/// Minimum slack of one check over a run; fails if the check never applied.
struct Sweep {
    double worst = std::numeric_limits<double>::infinity();
    std::size_t evaluated = 0;
};

Sweep sweep(const RunLog& log, const std::function<std::optional<double>(const StepRecord&)>& slack) {
    Sweep s;
    for (const auto& r : log.records) {
        if (auto v = slack(r)) {
            ++s.evaluated;
            s.worst = std::min(s.worst, *v);
        }
    }
    return s;
}

std::optional<double> applied(const Check& c) {
    if (c.verdict == Verdict::NotApplicable) return std::nullopt;
    return c.slack;
}

Outcome criterion1() {
    const Runs& r = theorem31_runs();
    const double J1 = r.l1.constants->inputs.J1.value;
    const Sweep a = sweep(r.l1, [&](const StepRecord& s) -> std::optional<double> {
        if (s.i1.verdict == Verdict::NotApplicable) return std::nullopt;
        return (s.rate_bound - s.J.value) / J1;
    });
    const Sweep b = sweep(r.l2, [&](const StepRecord& s) -> std::optional<double> {
        if (s.i1_log.verdict == Verdict::NotApplicable) return std::nullopt;
        return s.log_rate_bound - s.J.log_value;
    });
    const bool steps = r.l1.records.size() == 10000 && r.l2.records.size() == 10000;
    Outcome o;
    o.pass = steps && a.evaluated == r.l1.records.size() && b.evaluated == r.l2.records.size() && a.worst >= -1e-15 &&
             b.worst >= -1e-12 && r.l1_seconds < 30.0 && r.l2_seconds < 30.0;
    o.detail = "L=1 worst slack/J1 " + fmt(a.worst) + " over " + std::to_string(a.evaluated) +
               " steps (J1 " + fmt(J1) + ", " + fmt(r.l1_seconds) + " s); L=2 worst log slack " + fmt(b.worst) +
               " over " + std::to_string(b.evaluated) + " steps (logJ1 " +
               fmt(r.l2.constants->inputs.J1.log_value) + ", " + fmt(r.l2_seconds) + " s)";
    return o;
}

Outcome run_check(const char* name, double tol) {
    const Runs& r = theorem31_runs();
    const Sweep a = sweep(r.l1, [&](const StepRecord& s) { return applied(check_by_name(s, name)); });
    const Sweep b = sweep(r.l2, [&](const StepRecord& s) { return applied(check_by_name(s, name)); });
    Outcome o;
    o.pass = a.evaluated > 0 && b.evaluated > 0 && a.worst >= -tol && b.worst >= -tol;
    o.detail = std::string(name) + " worst relative slack L=1 " + fmt(a.worst) + " (" + std::to_string(a.evaluated) +
               " checked), L=2 " + fmt(b.worst) + " (" + std::to_string(b.evaluated) + " checked)";
    return o;
}

Outcome criterion5() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(20240501);
    double worst = 0.0;
    std::size_t compared = 0;
    std::size_t excluded = 0;
    for (int i = 0; i < 100; ++i) {
        const ActivationKind kind = i % 2 == 0 ? ActivationKind::HuberizedReLU : ActivationKind::ScaledSwish;
        const RandomInstance inst = random_instance(rng, 6, 3, 4, kind, 0.5, 1.5);
        const WeightStack g = gradient(inst.V, inst.act, inst.data);
        const WeightStack fd = oracle::fd_gradient(inst.V, inst.act, inst.data);
        const oracle::KinkExclusion ex = oracle::kink_exclusions(inst.V, inst.act, inst.data);
        const oracle::FdReport rep = oracle::fd_compare(g, fd, 1e-6, 1e-5, &ex.mask);
        worst = std::max(worst, rep.max_error);
        compared += rep.compared;
        excluded += rep.excluded;
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-6 && secs < 60.0, "max relative error " + fmt(worst) + " over " + std::to_string(compared) +
                                             " entries (" + std::to_string(excluded) + " kink-adjacent skipped), " +
                                             fmt(secs) + " s"};
}

Outcome criterion6() {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::ostringstream d;
    for (auto kind : {ActivationKind::HuberizedReLU, ActivationKind::ScaledSwish}) {
        for (double h : {0.01, 0.1, 1.0}) {
            const SmoothnessReport r = certify_h_smooth(Activation(kind, h));
            ok = ok && r.pass && r.samples_used >= 10000 && r.tol <= 1e-9;
            d << (kind == ActivationKind::HuberizedReLU ? "huberized" : "swish") << "@" << h << (r.pass ? " ok " : " FAIL ");
        }
    }
    const double secs = seconds_since(t0);
    d << fmt(secs) << " s";
    return {ok && secs < 5.0, d.str()};
}

Outcome criterion7() {
    bool ok = true;
    std::ostringstream d;
    for (auto kind : {ActivationKind::HuberizedReLU, ActivationKind::ScaledSwish}) {
        const PropertyTally t = check_contractivity(Activation(kind, 0.1), 10000, 7);
        ok = ok && t.pass() && t.instances == 10000;
        d << t.name << " worst slack " << fmt(t.worst_slack) << "; ";
    }
    return {ok, d.str()};
}

Outcome criterion8() {
    const PropertyTally a = check_gradient_upper_bound(100, 8);
    const PropertyTally b = check_product_bound(100, 9);
    return {a.pass() && b.pass() && a.instances == 100 && b.instances == 100 && a.worst_slack >= -1e-10 &&
                b.worst_slack >= -1e-10,
            "gradient upper worst slack " + fmt(a.worst_slack) + ", product worst slack " + fmt(b.worst_slack)};
}

Outcome criterion9() {
    const Runs& r = theorem31_runs();
    std::size_t checked = 0;
    std::size_t failed = 0;
    double closest = std::numeric_limits<double>::infinity();
    for (const RunLog* log : {&r.l1, &r.l2}) {
        const double L = static_cast<double>(log->constants->inputs.L);
        const double n = static_cast<double>(log->constants->inputs.n);
        const double log_cut = std::log(2.0) - (1.0 + 24.0 * L) * std::log(n);
        for (const auto& s : log->records) {
            if (!(s.J.log_value < log_cut)) continue;
            ++checked;
            const double floor = std::sqrt(L + 1.0);
            closest = std::min(closest, s.weight_norm - floor);
            failed += !(s.weight_norm > floor);
        }
    }
    return {checked > 0 && failed == 0,
            std::to_string(checked) + " small-loss states, min ||V|| - sqrt(L+1) = " + fmt(closest)};
}

Outcome criterion10() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t p = 1024;
    const Activation act(ActivationKind::HuberizedReLU, std::sqrt(std::numbers::pi) / (2.0 * p));
    int good = 0;
    double worst_norm_err = 0.0;
    double min_gamma = std::numeric_limits<double>::infinity();
    std::size_t degenerate = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        ClusteredDataSpec spec;
        spec.p = p;
        spec.r = 0.0;
        spec.n = 8;
        spec.seed = seed;
        const ClusteredData cd = make_clustered_dataset(spec);
        const WeightStack V1 = gaussian_init({p, 1, seed});
        try {
            const MarginWitness w = margin_witness_clustered(V1, act, cd.data, cd.mu);
            worst_norm_err = std::max(worst_norm_err, std::abs(frobenius_norm(w.W_star) - 1.0));
            min_gamma = std::min(min_gamma, w.gamma);
            good += w.gamma >= 1.0 / 40.0;
        } catch (const std::runtime_error&) {
            ++degenerate;
        }
    }
    const double secs = seconds_since(t0);
    return {good >= 18 && worst_norm_err <= 1e-10 && secs < 60.0,
            std::to_string(good) + "/20 seeds with gamma >= 1/40 (min " + fmt(min_gamma) + ", " +
                std::to_string(degenerate) + " degenerate), max | ||W*|| - 1 | " + fmt(worst_norm_err) + ", " +
                fmt(secs) + " s"};
}

Outcome criterion11() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t p = 2048;
    const std::size_t L = 3;
    bool ok = true;
    double x_lo = std::numeric_limits<double>::infinity();
    double x_hi = 0.0;
    double op_hi = 0.0;
    double r_lo = std::numeric_limits<double>::infinity();
    double r_hi = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ClusteredDataSpec spec;
        spec.p = p;
        spec.n = 8;
        spec.seed = seed + 100;
        const ClusteredData cd = make_clustered_dataset(spec);
        const WeightStack V1 = gaussian_init({p, L, seed});
        const Activation act(ActivationKind::HuberizedReLU, compute_h_nt(p, L, spec.n));
        DiagnosticOptions opt;
        opt.seed = seed;
        const InitDiagnostics d = init_diagnostics(V1, act, cd.data, opt);
        ok = ok && d.all_in_range();
        for (const auto& s : d.x_norms) {
            x_lo = std::min(x_lo, s.min);
            x_hi = std::max(x_hi, s.max);
        }
        for (const auto& o : d.hidden_operator_norms) op_hi = std::max(op_hi, o.value);
        r_lo = std::min(r_lo, d.outer_ratio);
        r_hi = std::max(r_hi, d.outer_ratio);
    }
    const double secs = seconds_since(t0);
    return {ok && x_lo >= 0.9 && x_hi <= 1.1 && op_hi <= 3.5 && r_lo >= 0.85 && r_hi <= 1.2 && secs < 60.0,
            "||x|| in [" + fmt(x_lo) + ", " + fmt(x_hi) + "], max hidden op norm " + fmt(op_hi) +
                ", outer ratio in [" + fmt(r_lo) + ", " + fmt(r_hi) + "], " + fmt(secs) + " s"};
}

Outcome criterion12() {
    ClusteredDataSpec spec;
    spec.p = 64;
    spec.n = 4;
    spec.seed = 12;
    const Dataset data = make_clustered_dataset(spec).data;
    const WeightStack V1 = gaussian_init({64, 1, 11});
    const Activation act(ActivationKind::HuberizedReLU, 0.05);
    const double J = total_loss(V1, act, data).value;

    NtBallConfig nt;
    nt.steps = 500;
    nt.rho = 0.0;
    const double e0 = nt_class_minimize(V1, act, data, nt).eps_nt;
    std::vector<double> eps;
    for (double rho : {0.1, 1.0, 10.0}) {
        nt.rho = rho;
        eps.push_back(nt_class_minimize(V1, act, data, nt).eps_nt);
    }
    const bool monotone = eps[1] <= eps[0] + 1e-8 && eps[2] <= eps[1] + 1e-8;
    const double app0 = approx_error_sample(V1, act, data, 0.0, 8, 1);

    AverageLossOptions opt;
    opt.alpha = 0.02;
    opt.T = 50;
    opt.rho = 0.1;
    opt.tau = 1.0;
    opt.seed = 3;
    const AverageLossCheck c = check_average_loss_bound(V1, act, data, opt);
    std::ostringstream d;
    d << "eps_nt(0) " << fmt(e0) << " vs J(V1) " << fmt(J) << "; eps_nt over rho {0.1,1,10} " << fmt(eps[0]) << ", "
      << fmt(eps[1]) << ", " << fmt(eps[2]) << "; approx_error(0) " << fmt(app0) << "; average loss "
      << fmt(c.average_loss) << " <= " << fmt(c.bound) << " with max iterate distance " << fmt(c.max_iterate_distance)
      << " <= tau " << fmt(opt.tau) << ", eps_app >= " << fmt(c.eps_app_lower);
    return {e0 == J && monotone && app0 == 0.0 && c.iterates_in_ball && c.applicable && c.pass, d.str()};
}

Outcome criterion13() {
    const RunLog log = execute(load_config(kConfigDir + "/negative_control.json"));
    std::size_t violations = 0;
    std::string first;
    for (const auto& v : log.verdicts) {
        if (gates_exit_status(v.name) && v.failures > 0) {
            violations += v.failures;
            if (first.empty()) first = v.name + " at t=" + std::to_string(*v.first_violation);
        }
    }
    return {!log.passed && violations > 0, std::to_string(violations) + " gating violations, first " + first};
}

Outcome criterion14() {
    bool ok = true;
    std::ostringstream d;
    for (const char* name : {"theorem31_L1.json", "theorem31_L2.json", "negative_control.json"}) {
        const RunConfig c = load_config(kConfigDir + "/" + name);
        const std::string a = csv_string(execute(c).records);
        const std::string b = csv_string(execute(c).records);
        ok = ok && a == b && !a.empty();
        d << name << (a == b ? " identical (" : " differs (") << a.size() << " bytes) ";
    }
    return {ok, d.str()};
}

}  // namespace

int main() {
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, criterion1},
        {2, [] { return run_check("grad_lower", 1e-12); }},
        {3, [] { return run_check("i2", 1e-12); }},
        {4, [] { return run_check("descent", 1e-12); }},
        {5, criterion5},
        {6, criterion6},
        {7, criterion7},
        {8, criterion8},
        {9, criterion9},
        {10, criterion10},
        {11, criterion11},
        {12, criterion12},
        {13, criterion13},
        {14, criterion14},
    };
    int failures = 0;
    for (const auto& [id, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
