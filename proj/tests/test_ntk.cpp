#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "boundbench/harness.hpp"
#include "boundbench/ntk.hpp"
#include "test_util.hpp"

using namespace boundbench;

namespace {

ClusteredData clustered(std::size_t p, std::size_t n, double r, std::uint64_t seed) {
    ClusteredDataSpec spec;
    spec.p = p;
    spec.n = n;
    spec.r = r;
    spec.seed = seed;
    return make_clustered_dataset(spec);
}

double witness_h(std::size_t p) { return std::sqrt(std::numbers::pi) / (2.0 * static_cast<double>(p)); }

}  // namespace

TEST(Init, Deterministic) {
    EXPECT_EQ(gaussian_init({6, 2, 9}), gaussian_init({6, 2, 9}));
    EXPECT_NE(gaussian_init({6, 2, 9}), gaussian_init({6, 2, 10}));
    EXPECT_THROW(gaussian_init({0, 1, 1}), std::invalid_argument);
}

TEST(Init, StreamsDifferByPurpose) {
    EXPECT_NE(stream_seed(1, 1), stream_seed(1, 2));
    EXPECT_NE(stream_seed(1, 1), stream_seed(2, 1));
    EXPECT_EQ(stream_seed(7, 3), stream_seed(7, 3));
}

TEST(Init, WideVarianceAndNorm) {
    const std::size_t p = 2048;
    const std::size_t L = 3;
    const WeightStack V = gaussian_init({p, L, 5});
    for (std::size_t l = 0; l < L; ++l) {
        double s = 0.0;
        double s2 = 0.0;
        for (double v : V.hidden(l).data()) {
            s += v;
            s2 += v * v;
        }
        const double m = static_cast<double>(p * p);
        const double var = s2 / m - (s / m) * (s / m);
        EXPECT_NEAR(var, 2.0 / p, 0.05 * 2.0 / p) << "layer " << l;
    }
    EXPECT_LE(frobenius_norm(V), std::sqrt(5.0 * p * L));
}

TEST(Features, OuterBlockIsLastHidden) {
    std::mt19937_64 rng(71);
    const WeightStack V = gaussian_init({6, 3, 1});
    const Dataset d = bbtest::random_data(6, 3, rng);
    const Activation act(ActivationKind::HuberizedReLU, 0.1);
    const auto F = ntk_features(V, act, d);
    for (std::size_t s = 0; s < d.size(); ++s) {
        EXPECT_EQ(F[s].outer, forward(V, act, d.input(s)).x.back());
        EXPECT_EQ(tangent_output(1.25, F[s], WeightStack::zeros(6, 3)), 1.25);
    }
}

TEST(Features, DirectionalDerivative) {
    std::mt19937_64 rng(72);
    for (ActivationKind k : {ActivationKind::HuberizedReLU, ActivationKind::ScaledSwish}) {
        const WeightStack V = gaussian_init({5, 2, 3});
        const Dataset d = bbtest::random_data(5, 2, rng);
        const WeightStack D = bbtest::random_stack(5, 2, rng);
        const Activation act(k, 0.3);
        const auto F = ntk_features(V, act, d);
        const double eps = 1e-6;
        for (std::size_t s = 0; s < d.size(); ++s) {
            const double up = network_output(stack_axpy(V, eps, D), act, d.input(s));
            const double dn = network_output(stack_axpy(V, -eps, D), act, d.input(s));
            const double fd = (up - dn) / (2 * eps);
            EXPECT_LE(bbtest::rel_err(fd, F[s].dot(D)), 1e-5);
        }
    }
}

TEST(Features, TangentRemainderIsSecondOrder) {
    std::mt19937_64 rng(73);
    const WeightStack V = gaussian_init({4, 2, 4});
    const Dataset d = bbtest::random_data(4, 1, rng);
    const WeightStack D = bbtest::random_stack(4, 2, rng);
    const Activation act(ActivationKind::ScaledSwish, 0.5);
    const NtkFeature F = ntk_features(V, act, d)[0];
    const double f0 = network_output(V, act, d.input(0));
    auto remainder = [&](double eps) {
        return std::abs(network_output(stack_axpy(V, eps, D), act, d.input(0)) - f0 - eps * F.dot(D));
    };
    const double ratio = remainder(1e-3) / remainder(5e-4);
    EXPECT_GT(ratio, 3.0);
    EXPECT_LT(ratio, 5.0);
}

TEST(Features, DenseMatchesRankOneDot) {
    std::mt19937_64 rng(74);
    const WeightStack V = gaussian_init({5, 3, 2});
    const Dataset d = bbtest::random_data(5, 1, rng);
    const NtkFeature F = ntk_features(V, Activation(ActivationKind::ScaledSwish, 0.2), d)[0];
    const WeightStack W = bbtest::random_stack(5, 3, rng);
    EXPECT_NEAR(F.dot(W), stack_dot(F.dense(), W), 1e-12);
    EXPECT_NEAR(F.norm(), frobenius_norm(F.dense()), 1e-12);
}

TEST(Clustered, ZeroRadiusGivesCentres) {
    const ClusteredData c = clustered(8, 6, 0.0, 3);
    EXPECT_NEAR(norm2(c.mu), 1.0, 1e-15);
    for (std::size_t s = 0; s < c.data.size(); ++s) {
        for (std::size_t j = 0; j < 8; ++j) {
            EXPECT_NEAR(c.data.input(s)[j], c.data.label(s) * c.mu[j], 1e-15);
        }
    }
}

TEST(Clustered, WithinRadiusBalancedUnitNorm) {
    const double r = 0.05;
    const ClusteredData c = clustered(16, 10, r, 4);
    int plus = 0;
    for (std::size_t s = 0; s < c.data.size(); ++s) {
        const int y = c.data.label(s);
        plus += y > 0;
        Vector diff = c.data.input(s);
        for (std::size_t j = 0; j < diff.size(); ++j) diff[j] -= y * c.mu[j];
        EXPECT_LE(norm2(diff), r * (1 + 1e-12));
        EXPECT_NEAR(norm2(c.data.input(s)), 1.0, 1e-14);
    }
    EXPECT_EQ(plus, 5);
}

TEST(Clustered, Validation) {
    EXPECT_THROW(clustered(4, 1, 0.05, 1), std::invalid_argument);
    EXPECT_THROW(clustered(4, 4, 0.1, 1), std::invalid_argument);
    ClusteredDataSpec spec;
    spec.p = 4;
    spec.n = 4;
    spec.r = 0.1;
    spec.allow_large_r = true;
    const ClusteredData c = make_clustered_dataset(spec);
    EXPECT_FALSE(c.warnings.empty());
    spec.r = 0.05;
    spec.allow_large_r = false;
    spec.mu = {2.0, 0.0, 0.0, 0.0};
    const ClusteredData m = make_clustered_dataset(spec);
    EXPECT_NEAR(norm2(m.mu), 1.0, 1e-15);
    EXPECT_FALSE(m.warnings.empty());
}

TEST(Witness, UnitNormAndExactGamma) {
    const std::size_t p = 256;
    const ClusteredData c = clustered(p, 4, 0.0, 5);
    const WeightStack V = gaussian_init({p, 1, 6});
    const Activation act(ActivationKind::HuberizedReLU, witness_h(p));
    const MarginWitness w = margin_witness_clustered(V, act, c.data, c.mu);
    EXPECT_NEAR(frobenius_norm(w.W_star), 1.0, 1e-10);
    EXPECT_NEAR(w.gamma, margin_of(ntk_features(V, act, c.data), c.data.labels(), w.W_star), 1e-12);
    EXPECT_GT(w.gamma, 0.0);
    EXPECT_GT(w.s_plus + w.s_minus, 0u);
    EXPECT_EQ(w.construction, WitnessConstruction::ClusteredExplicit);
}

TEST(Witness, Preconditions) {
    const ClusteredData c = clustered(8, 4, 0.0, 5);
    const Activation small(ActivationKind::HuberizedReLU, witness_h(8));
    EXPECT_THROW(margin_witness_clustered(gaussian_init({8, 2, 1}), small, c.data, c.mu), std::invalid_argument);
    EXPECT_THROW(margin_witness_clustered(gaussian_init({8, 1, 1}), Activation(ActivationKind::ScaledSwish, 0.01),
                                          c.data, c.mu),
                 std::invalid_argument);
    EXPECT_THROW(margin_witness_clustered(gaussian_init({8, 1, 1}), Activation(ActivationKind::HuberizedReLU, 1.0),
                                          c.data, c.mu),
                 std::invalid_argument);
    WeightStack degenerate = gaussian_init({8, 1, 1});
    for (double& v : degenerate.outer().data()) v = 0.0;
    EXPECT_THROW(margin_witness_clustered(degenerate, small, c.data, c.mu), std::runtime_error);
}

TEST(Witness, MismatchedCentreIsReportedOnly) {
    const std::size_t p = 64;
    ClusteredDataSpec spec;
    spec.p = p;
    spec.n = 4;
    spec.r = 0.0;
    spec.mu = Vector(p, 0.0);
    spec.mu[0] = 1.0;
    const ClusteredData c = make_clustered_dataset(spec);
    Vector other(p, 0.0);
    other[1] = 1.0;
    const WeightStack V = gaussian_init({p, 1, 2});
    const Activation act(ActivationKind::HuberizedReLU, witness_h(p));
    const MarginWitness w = margin_witness_clustered(V, act, c.data, other);
    EXPECT_TRUE(std::isfinite(w.gamma));
    EXPECT_NEAR(frobenius_norm(w.W_star), 1.0, 1e-10);
}

TEST(Subgradient, SingleSampleOptimum) {
    std::mt19937_64 rng(75);
    const WeightStack V = gaussian_init({6, 2, 3});
    const Dataset d = bbtest::random_data(6, 1, rng);
    const Activation act(ActivationKind::ScaledSwish, 0.2);
    const auto F = ntk_features(V, act, d);
    const MarginWitness w = margin_estimate_subgradient(F, d.labels(), 50, 0.5);
    EXPECT_NEAR(w.gamma, F[0].norm() / std::sqrt(6.0), 1e-12);
    EXPECT_NEAR(frobenius_norm(w.W_star), 1.0, 1e-12);

    const Dataset dup({d.input(0), d.input(0)}, {d.label(0), d.label(0)});
    const MarginWitness w2 = margin_estimate_subgradient(ntk_features(V, act, dup), dup.labels(), 50, 0.5);
    EXPECT_NEAR(w2.gamma, w.gamma, 1e-12);
    EXPECT_THROW(margin_estimate_subgradient(F, {1, -1}, 5, 0.5), std::invalid_argument);
}

TEST(Subgradient, AtLeastNinetyPercentOfClusteredWitness) {
    const std::size_t p = 256;
    const ClusteredData c = clustered(p, 4, 0.05, 8);
    const WeightStack V = gaussian_init({p, 1, 9});
    const Activation act(ActivationKind::HuberizedReLU, witness_h(p));
    const MarginWitness w = margin_witness_clustered(V, act, c.data, c.mu);
    const MarginWitness e = margin_estimate_subgradient(ntk_features(V, act, c.data), c.data.labels(), 200, 0.5);
    EXPECT_GE(e.gamma, 0.9 * w.gamma);
}

namespace {

struct NtFixture {
    WeightStack V1;
    Dataset data;
    Activation act{ActivationKind::HuberizedReLU, 0.05};
};

NtFixture nt_fixture() {
    NtFixture f;
    f.V1 = gaussian_init({8, 1, 11});
    f.data = clustered(8, 4, 0.05, 12).data;
    return f;
}

}  // namespace

TEST(NtClass, ZeroRadiusIsInitialLoss) {
    const NtFixture f = nt_fixture();
    NtBallConfig cfg;
    cfg.rho = 0.0;
    EXPECT_EQ(nt_class_minimize(f.V1, f.act, f.data, cfg).eps_nt, total_loss(f.V1, f.act, f.data).value);
}

TEST(NtClass, MonotoneInRadiusAndNonIncreasing) {
    const NtFixture f = nt_fixture();
    double prev = std::numeric_limits<double>::infinity();
    for (double rho : {0.1, 1.0, 10.0}) {
        NtBallConfig cfg;
        cfg.rho = rho;
        cfg.steps = 500;
        const NtClassResult r = nt_class_minimize(f.V1, f.act, f.data, cfg);
        EXPECT_LE(r.eps_nt, prev + 1e-8) << rho;
        prev = r.eps_nt;
        for (std::size_t k = 1; k < r.objective.size(); ++k) {
            EXPECT_LE(r.objective[k], r.objective[k - 1]);
        }
        EXPECT_LE(max_layer_distance(r.V_star, f.V1), rho * (1 + 1e-12));
    }
    EXPECT_LT(prev, 0.01 * total_loss(f.V1, f.act, f.data).value);
}

TEST(NtClass, RestartsAgree) {
    const NtFixture f = nt_fixture();
    NtBallConfig a;
    a.rho = 0.2;
    a.steps = 20'000;
    NtBallConfig b = a;
    b.restart_seed = 99;
    const double ea = nt_class_minimize(f.V1, f.act, f.data, a).eps_nt;
    const double eb = nt_class_minimize(f.V1, f.act, f.data, b).eps_nt;
    EXPECT_NEAR(ea, eb, 1e-6);
}

TEST(NtClass, RejectsNegativeRadius) {
    const NtFixture f = nt_fixture();
    NtBallConfig cfg;
    cfg.rho = -1.0;
    EXPECT_THROW(nt_class_minimize(f.V1, f.act, f.data, cfg), std::invalid_argument);
}

TEST(ApproxError, ZeroRadius) {
    const NtFixture f = nt_fixture();
    EXPECT_EQ(approx_error_sample(f.V1, f.act, f.data, 0.0, 8, 1), 0.0);
    EXPECT_THROW(approx_error_sample(f.V1, f.act, f.data, 0.1, 0, 1), std::invalid_argument);
}

TEST(ApproxError, BelowCalibratedBound) {
    const double tau = 0.05;
    const Activation act(ActivationKind::HuberizedReLU, 0.01);
    auto estimate = [&](std::size_t p) {
        const WeightStack V = gaussian_init({p, 1, 21});
        const Dataset d = clustered(p, 4, 0.05, 22).data;
        return approx_error_sample(V, act, d, tau, 16, 23);
    };
    double C = 0.0;
    for (std::size_t p : {16u, 32u}) {
        C = std::max(C, 2.0 * estimate(p) / approx_error_upper_bound(p, 1, tau, 1.0));
    }
    ASSERT_GT(C, 0.0);
    for (std::size_t p : {64u, 128u, 256u}) {
        EXPECT_LE(estimate(p), approx_error_upper_bound(p, 1, tau, C)) << p;
    }
}

TEST(GammaBound, ExactAtZeroRadius) {
    const NtFixture f = nt_fixture();
    double best = 0.0;
    for (std::size_t s = 0; s < f.data.size(); ++s) {
        const OutputGradient g = output_gradient(f.V1, f.act, f.data.input(s));
        for (std::size_t k = 0; k <= f.V1.depth(); ++k) best = std::max(best, g.layer_norm(k));
    }
    EXPECT_EQ(gamma_bound(f.V1, f.act, f.data, 0.0), best);
    EXPECT_GE(gamma_bound(f.V1, f.act, f.data, 0.1, 4, 1), 0.0);
}

TEST(GammaBound, WideInitBelowCalibratedRootP) {
    const std::size_t L = 2;
    auto ratio = [&](std::size_t p) {
        const WeightStack V = gaussian_init({p, L, 31});
        const Dataset d = clustered(p, 4, 0.05, 32).data;
        return gamma_bound(V, Activation(ActivationKind::HuberizedReLU, 0.01), d, 0.0) /
               (std::sqrt(static_cast<double>(p)) * L * L);
    };
    const double C = 2.0 * ratio(256);
    EXPECT_LE(ratio(1024), C);
}

TEST(Diagnostics, NarrowWidthWarnsOnly) {
    const WeightStack V = gaussian_init({8, 2, 3});
    const Dataset d = clustered(8, 4, 0.05, 4).data;
    const InitDiagnostics r = init_diagnostics(V, Activation(ActivationKind::HuberizedReLU, 0.1), d);
    EXPECT_FALSE(r.wide_regime);
    EXPECT_FALSE(r.warnings.empty());
    EXPECT_EQ(r.x_norms.size(), 2u);
    EXPECT_EQ(r.hidden_operator_norms.size(), 2u);
}

TEST(Diagnostics, SigmaDifferenceCountsWithTau) {
    const WeightStack V = gaussian_init({64, 2, 3});
    const Dataset d = clustered(64, 4, 0.05, 4).data;
    DiagnosticOptions opt;
    opt.tau = 0.0;
    const InitDiagnostics zero = init_diagnostics(V, Activation(ActivationKind::HuberizedReLU, 0.1), d, opt);
    ASSERT_EQ(zero.sigma_difference_counts.size(), 2u);
    EXPECT_EQ(zero.sigma_difference_counts[0], 0u);
    opt.tau = 0.5;
    const InitDiagnostics wide = init_diagnostics(V, Activation(ActivationKind::HuberizedReLU, 0.1), d, opt);
    EXPECT_GT(wide.sigma_difference_counts[0] + wide.sigma_difference_counts[1], 0u);
}

TEST(PhasePlan, ClosedForms) {
    const double h = compute_h_nt(64, 1, 4);
    EXPECT_NEAR(h, 25.0 * std::log(4.0) / (6.0 * 384.0), 1e-15);
    const double rho = compute_rho(64, 1, 4, 0.5, 0.1, 1.0);
    EXPECT_NEAR(rho, (std::sqrt(std::log(40.0)) + std::log(6.0) + 26.0 * std::log(4.0)) / (8.0 * 0.5), 1e-13);
    const PhasePlan plan = make_phase_plan(64, 1, 4, 0.5);
    EXPECT_DOUBLE_EQ(plan.alpha_nt, 1.0 / 64.0);
    EXPECT_TRUE(std::isinf(plan.T_formula) || plan.T_formula >= 1.0);
    EXPECT_LE(plan.T, 1'000'000'000u);
    EXPECT_THROW(make_phase_plan(64, 1, 4, 0.0), std::invalid_argument);
    EXPECT_NEAR(compute_phase1_length(1, 2, 1.0, 1.0), std::ceil(3.0 * 2.0 * std::pow(2.0, 26.0) / 2.0), 0.0);
}

namespace {

struct SmallLoss {
    WeightStack V1;
    Dataset data;
    Activation act{ActivationKind::HuberizedReLU, 0.05};
};

SmallLoss small_loss_start() {
    SmallLoss s;
    s.data = clustered(4, 3, 0.05, 3).data;
    const WarmupResult w = warmup(gaussian_init({4, 1, 2}), s.act, s.data, 500, 0.5);
    s.V1 = build_small_loss_init(w.V, s.data, s.act, 1e-3).V;
    return s;
}

}  // namespace

TEST(TwoPhase, SingleStepPlan) {
    const SmallLoss s = small_loss_start();
    PhasePlan plan = make_phase_plan(4, 1, 3, 0.5);
    plan.T = 1;
    const TwoPhaseResult r = two_phase_train(s.V1, s.act, s.data, plan, 5);
    EXPECT_EQ(r.phase1_steps, 1u);
    EXPECT_EQ(r.argmin_step, 1u);
    EXPECT_EQ(r.argmin_loss.value, total_loss(s.V1, s.act, s.data).value);
    ASSERT_EQ(r.records.size(), 5u);
    EXPECT_EQ(r.records[0].phase, 1);
    EXPECT_EQ(r.records[1].phase, 2);
    EXPECT_EQ(r.records[1].t, 2u);
    EXPECT_EQ(r.records[1].J.value, r.argmin_loss.value);
}

TEST(TwoPhase, PhaseChangesOnceAndArgminIsEarliest) {
    const SmallLoss s = small_loss_start();
    PhasePlan plan = make_phase_plan(4, 1, 3, 0.5);
    plan.T = 30;
    const TwoPhaseResult r = two_phase_train(s.V1, s.act, s.data, plan, 40);
    int changes = 0;
    for (std::size_t k = 1; k < r.records.size(); ++k) changes += r.records[k].phase != r.records[k - 1].phase;
    EXPECT_EQ(changes, 1);
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t k = 0; k < r.phase1_steps; ++k) {
        if (r.records[k].J.value < best) {
            best = r.records[k].J.value;
            arg = r.records[k].t;
        }
    }
    EXPECT_EQ(r.argmin_step, arg);
    ASSERT_TRUE(r.phase2_constants.has_value());
    EXPECT_EQ(r.phase2_constants->inputs.J1.value, best);
}

TEST(TwoPhase, ThresholdStopsPhaseOne) {
    const SmallLoss s = small_loss_start();
    PhasePlan plan = make_phase_plan(4, 1, 3, 0.5);
    plan.T = 1000;
    plan.phase1_loss_threshold = 1.0;
    const TwoPhaseResult r = two_phase_train(s.V1, s.act, s.data, plan, 1000);
    EXPECT_TRUE(r.threshold_reached);
    EXPECT_EQ(r.phase1_steps, 1u);
}

TEST(TwoPhase, RejectsZeroStep) {
    const SmallLoss s = small_loss_start();
    PhasePlan plan = make_phase_plan(4, 1, 3, 0.5);
    plan.alpha_nt = 0.0;
    EXPECT_THROW(two_phase_train(s.V1, s.act, s.data, plan, 5), std::invalid_argument);
}

TEST(Descent, OffsetAndFloor) {
    const SmallLoss s = small_loss_start();
    const TheoryInputs in{total_loss(s.V1, s.act, s.data), 4, 1, frobenius_norm(s.V1), 3};
    const TheoryConstants c = make_constants(in, s.act.h(), 0.5);
    DescentOptions opt;
    opt.max_steps = 50;
    opt.t_offset = 10;
    const DescentResult r = monitored_descent(s.V1, s.act, s.data, c, opt);
    ASSERT_EQ(r.records.size(), 50u);
    EXPECT_EQ(r.records.front().t, 11u);
    EXPECT_EQ(r.records.front().i1.verdict, Verdict::NotApplicable);
    opt.loss_floor = r.records[5].J.value;
    const DescentResult f = monitored_descent(s.V1, s.act, s.data, c, opt);
    EXPECT_LT(f.records.size(), 50u);
    EXPECT_LT(f.J_final.value, opt.loss_floor);
}

TEST(AverageLoss, HoldsWhenIteratesStayInBall) {
    const NtFixture f = nt_fixture();
    AverageLossOptions opt;
    opt.alpha = 1.0 / 8.0;
    opt.T = 20;
    opt.rho = 0.1;
    opt.tau = 1.0;
    opt.seed = 3;
    const AverageLossCheck c = check_average_loss_bound(f.V1, f.act, f.data, opt);
    EXPECT_TRUE(c.iterates_in_ball);
    EXPECT_TRUE(c.star_in_ball);
    EXPECT_LT(c.eps_app_lower, 0.375);
    EXPECT_TRUE(c.applicable);
    EXPECT_TRUE(c.pass) << c.average_loss << " vs " << c.bound;
    EXPECT_LE(c.bound_with_end, c.bound);
}

TEST(AverageLoss, NotApplicableOutsideBall) {
    const NtFixture f = nt_fixture();
    AverageLossOptions opt;
    opt.alpha = 1.0;
    opt.T = 50;
    opt.rho = 0.1;
    opt.tau = 1e-3;
    const AverageLossCheck c = check_average_loss_bound(f.V1, f.act, f.data, opt);
    EXPECT_FALSE(c.applicable);
    EXPECT_FALSE(c.pass);
}
