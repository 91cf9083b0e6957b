#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "helpers.hpp"

using namespace splitplot;
using testutil::MeanSE;
using testutil::random_matrix;
using testutil::random_sample;
using testutil::rel_diff;

namespace {

// tr((T V_N)^k) from explicitly materialized T and V_N.
double direct_trace(const ProjectionPair& p, const SplitPlotDesign& des, int k) {
    const long a = des.a(), d = des.d();
    Matrix T = kron(p.t_whole(), p.t_sub());
    Matrix V = Matrix::Zero(a * d, a * d);
    for (long i = 0; i < a; ++i)
        V.block(i * d, i * d, d, d) = static_cast<double>(des.total()) / des.n[i] * des.covariances[i];
    Matrix M = T * V, P = M;
    for (int j = 1; j < k; ++j) P = P * M;
    return P.trace();
}

Matrix random_projector(long d, long rank, std::mt19937_64& g) {
    return projector_from_hypothesis(random_matrix(rank, d, g));
}

SplitPlotDesign ar_design(std::vector<long> n, long d, std::vector<double> rho) {
    std::vector<Matrix> covs;
    for (double r : rho) covs.push_back(ar1_covariance(d, r));
    return SplitPlotDesign::homogeneous_means(std::move(n), covs);
}

SplitPlotSample identical_rows(const std::vector<long>& n, long d) {
    SplitPlotSample s;
    std::mt19937_64 g(1);
    for (long ni : n) s.groups.push_back(random_matrix(1, d, g).replicate(ni, 1));
    return s;
}

// Monte Carlo mean of stat over reps samples from des, compared with target.
void expect_unbiased(const SplitPlotDesign& des, long reps, std::uint64_t seed, double target,
                     const std::function<double(const SplitPlotSample&, long)>& stat, const char* what) {
    GaussianSampler gs(des);
    MeanSE m;
    for (long r = 0; r < reps; ++r) m.add(stat(gs.draw(seed, r), r));
    EXPECT_LT(std::abs(m.mean() - target), 3.0 * m.se())
        << what << ": mean " << m.mean() << " target " << target << " se " << m.se();
}

}  // namespace

TEST(A1, SinglePairAndDegenerate) {
    Matrix X(2, 3);
    X << 1, 2, 3, 0, -1, 5;
    Matrix T = centering_matrix(3);
    Vector y = (X.row(0) - X.row(1)).transpose();
    EXPECT_NEAR(a1(X, T), 0.5 * y.dot(T * y), 1e-12);
    EXPECT_EQ(a1(Matrix::Constant(5, 3, 2.0), T), 0.0);
    try {
        a1(Matrix::Ones(1, 3), T);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::insufficient_sample);
    }
}

TEST(A1, Unbiased) {
    SplitPlotDesign des = ar_design({10}, 4, {0.6});
    Matrix P = centering_matrix(4);
    expect_unbiased(des, 100000, 21, (P * des.covariances[0]).trace(),
                    [&](const SplitPlotSample& s, long) { return a1(s.groups[0], P); }, "A1");
}

TEST(A2, DefinitionalMatchesHadamard) {
    std::mt19937_64 g(22);
    Matrix Xi = random_matrix(3, 2, g), Xr = random_matrix(3, 2, g);
    Matrix I = Matrix::Identity(2, 2);
    EXPECT_NEAR(a2(Xi, Xr, I), a2_definitional(Xi, Xr, I), 1e-12);
    EXPECT_EQ(a2(Matrix::Constant(4, 2, 1.0), Xr, I), 0.0);
    EXPECT_EQ(a2(Xi, Matrix::Constant(4, 2, -3.0), I), 0.0);
}

TEST(A2, Unbiased) {
    SplitPlotDesign des = ar_design({5, 6}, 3, {0.6, 0.65});
    Matrix P = centering_matrix(3);
    double target = (P * des.covariances[0] * P * des.covariances[1]).trace();
    expect_unbiased(des, 100000, 23, target,
                    [&](const SplitPlotSample& s, long) { return a2(s.groups[0], s.groups[1], P); }, "A2");
}

TEST(A3, DefinitionalMatchesClosedForm) {
    std::mt19937_64 g(24);
    Matrix X = random_matrix(4, 2, g);
    Matrix I = Matrix::Identity(2, 2);
    EXPECT_NEAR(a3(X, I), a3_definitional(X, I), 1e-10 * std::abs(a3_definitional(X, I)));
    EXPECT_EQ(a3(Matrix::Constant(6, 2, 4.0), I), 0.0);
    EXPECT_THROW(a3(random_matrix(3, 2, g), I), Error);
}

TEST(A3, Unbiased) {
    SplitPlotDesign des = ar_design({10}, 4, {0.6});
    Matrix P = centering_matrix(4);
    Matrix PS = P * des.covariances[0];
    expect_unbiased(des, 100000, 25, (PS * PS).trace(),
                    [&](const SplitPlotSample& s, long) { return a3(s.groups[0], P); }, "A3");
}

TEST(EfficientForms, MatchDefinitionsOnRandomSamples) {
    std::mt19937_64 g(26);
    for (int rep = 0; rep < 100; ++rep) {
        const long d = 1 + rep % 4;
        const long ni = 4 + rep % 5, nr = 2 + (rep * 7) % 7;
        Matrix T = random_projector(d, 1 + rep % d, g);
        Matrix Xi = random_matrix(ni, d, g) * 2.0, Xr = random_matrix(nr, d, g);
        Xi.rowwise() += random_matrix(1, d, g).row(0);
        EXPECT_LT(rel_diff(a2(Xi, Xr, T), a2_definitional(Xi, Xr, T)), 1e-9) << "rep " << rep;
        EXPECT_LT(rel_diff(a3(Xi, T), a3_definitional(Xi, T)), 1e-9) << "rep " << rep;
    }
}

TEST(A4, Reductions) {
    std::mt19937_64 g(27);
    SplitPlotSample s = random_sample({7}, 3, g);
    ProjectionPair one(Matrix::Ones(1, 1), centering_matrix(3));
    EXPECT_NEAR(a4(s, one), a3(s.groups[0], centering_matrix(3)), 1e-12);
    SplitPlotSample t = random_sample({6, 5}, 3, g);
    ProjectionPair zero(Matrix::Zero(2, 2), centering_matrix(3));
    EXPECT_EQ(a4(t, zero), 0.0);
    EXPECT_EQ(e_hat_q(t, zero), 0.0);
    EXPECT_NEAR(e_hat_q(s, one), a1(s.groups[0], centering_matrix(3)), 1e-12);
}

TEST(A4, Unbiased) {
    SplitPlotDesign des = ar_design({10, 15}, 3, {0.6, 0.65});
    ProjectionPair p = standard_hypothesis(HypothesisKind::interaction, 2, 3);
    expect_unbiased(des, 100000, 28, direct_trace(p, des, 2),
                    [&](const SplitPlotSample& s, long) { return a4(s, p); }, "A4");
}

TEST(A4, UnbiasedUnderArbitraryMeans) {
    SplitPlotDesign des = ar_design({10, 15}, 3, {0.6, 0.65});
    des.means << 5.0, -1.0, 2.0, 0.0, 3.0, -7.0;
    ProjectionPair p = standard_hypothesis(HypothesisKind::time, 2, 3);
    expect_unbiased(des, 100000, 29, direct_trace(p, des, 2),
                    [&](const SplitPlotSample& s, long) { return a4(s, p); }, "A4 with means");
}

TEST(EHat, UnbiasedForNullMean) {
    SplitPlotDesign des = ar_design({10, 15}, 3, {0.6, 0.65});
    ProjectionPair p = standard_hypothesis(HypothesisKind::time, 2, 3);
    expect_unbiased(des, 100000, 30, direct_trace(p, des, 1),
                    [&](const SplitPlotSample& s, long) { return e_hat_q(s, p); }, "E_hat");
}

TEST(C5, ExactMatchesBruteForceSingleGroup) {
    std::mt19937_64 g(31);
    SplitPlotSample s = random_sample({6}, 2, g);
    ProjectionPair p(Matrix::Ones(1, 1), random_projector(2, 1, g));
    double brute = testutil::brute_c5_single_group(s, p.materialize());
    EXPECT_LT(rel_diff(c5_exact(s, p), brute), 1e-10);
    ProjectionPair q(Matrix::Ones(1, 1), Matrix::Identity(2, 2));
    EXPECT_LT(rel_diff(c5_exact(s, q), testutil::brute_c5_single_group(s, q.materialize())), 1e-10);
}

TEST(C5, DegenerateAndErrors) {
    ProjectionPair p = standard_hypothesis(HypothesisKind::time, 2, 3);
    SplitPlotSample z = identical_rows({6, 7}, 3);
    EXPECT_EQ(c5_exact(z, p), 0.0);
    EXPECT_EQ(c5_star(z, p, 100, 1), 0.0);
    std::mt19937_64 g(32);
    try {
        c5_exact(random_sample({5, 7}, 3, g), p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::insufficient_sample);
    }
    try {
        c5_exact(random_sample({12, 12}, 3, g), p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::work_cap_exceeded);
    }
}

TEST(C5, ExactUnbiased) {
    SplitPlotDesign des = ar_design({6, 6}, 2, {0.6, 0.65});
    ProjectionPair p = standard_hypothesis(HypothesisKind::interaction, 2, 2);
    expect_unbiased(des, 400, 33, direct_trace(p, des, 3),
                    [&](const SplitPlotSample& s, long) { return c5_exact(s, p); }, "C5");
}

TEST(C5Star, ConvergesToExactAndDeterministic) {
    std::mt19937_64 g(34);
    SplitPlotSample s = random_sample({6, 6}, 3, g);
    ProjectionPair p = standard_hypothesis(HypothesisKind::group, 2, 3);
    double exact = c5_exact(s, p);
    double star = c5_star(s, p, 100000, 5);
    EXPECT_LT(rel_diff(star, exact), 0.05) << star << " vs " << exact;
    EXPECT_EQ(c5_star(s, p, 1000, 9), c5_star(s, p, 1000, 9));
    EXPECT_NE(c5_star(s, p, 1000, 9), c5_star(s, p, 1000, 10));
}

TEST(C5Star, Unbiased) {
    SplitPlotDesign des = ar_design({6, 8}, 2, {0.6, 0.65});
    ProjectionPair p = standard_hypothesis(HypothesisKind::interaction, 2, 2);
    expect_unbiased(des, 40000, 35, direct_trace(p, des, 3),
                    [&](const SplitPlotSample& s, long r) { return c5_star(s, p, 50, 1000 + r); }, "C5*");
}

namespace {

double brute_c6_single_group(const SplitPlotSample& s, const Matrix& T) {
    const long n = s.groups[0].rows();
    std::vector<long> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double acc = 0.0;
    long count = 0;
    // Every ordered 8-tuple appears (n-8)! times among permutations of n; n = 8 here.
    do {
        Vector z1 = testutil::stacked_z(s, {{perm[0], perm[1]}});
        Vector z2 = testutil::stacked_z(s, {{perm[2], perm[3]}});
        Vector z3 = testutil::stacked_z(s, {{perm[4], perm[5]}});
        Vector z4 = testutil::stacked_z(s, {{perm[6], perm[7]}});
        double l = z1.dot(T * z2), m = z3.dot(T * z4);
        acc += std::pow(l, 4) / 6.0 - l * l * m * m / 2.0;
        ++count;
    } while (std::next_permutation(perm.begin(), perm.end()));
    return acc / (16.0 * count);
}

}  // namespace

TEST(C6, ExactMatchesBruteForce) {
    std::mt19937_64 g(36);
    SplitPlotSample s = random_sample({8}, 2, g);
    ProjectionPair p(Matrix::Ones(1, 1), centering_matrix(2));
    EXPECT_LT(rel_diff(c6_exact(s, p), brute_c6_single_group(s, p.materialize())), 1e-10);
}

TEST(C6, DegenerateDeterministicErrors) {
    ProjectionPair p(Matrix::Ones(1, 1), centering_matrix(2));
    EXPECT_EQ(c6_exact(identical_rows({8}, 2), p), 0.0);
    EXPECT_EQ(c6_star(identical_rows({9}, 2), p, 50, 3), 0.0);
    std::mt19937_64 g(37);
    SplitPlotSample s = random_sample({9}, 2, g);
    EXPECT_EQ(c6_star(s, p, 500, 4), c6_star(s, p, 500, 4));
    EXPECT_THROW(c6_star(random_sample({7}, 2, g), p, 10, 1), Error);
}

TEST(C6, Unbiased) {
    SplitPlotDesign des = ar_design({8}, 2, {0.6});
    ProjectionPair p(Matrix::Ones(1, 1), centering_matrix(2));
    expect_unbiased(des, 3000, 38, direct_trace(p, des, 4),
                    [&](const SplitPlotSample& s, long) { return c6_exact(s, p); }, "C6");
}

TEST(C6Star, Unbiased) {
    SplitPlotDesign des = ar_design({8, 9}, 2, {0.6, 0.65});
    ProjectionPair p = standard_hypothesis(HypothesisKind::time, 2, 2);
    expect_unbiased(des, 40000, 39, direct_trace(p, des, 4),
                    [&](const SplitPlotSample& s, long r) { return c6_star(s, p, 50, 7 + r); }, "C6*");
}

TEST(C7, IdentityPermutationEqualsC5ForOneGroup) {
    std::mt19937_64 g(40);
    SplitPlotSample s = random_sample({7}, 3, g);
    ProjectionPair p(Matrix::Ones(1, 1), centering_matrix(3));
    GramCache gc(s, p);
    std::vector<long> id(7);
    std::iota(id.begin(), id.end(), 0);
    EXPECT_LT(rel_diff(c7_with_permutations(gc, {{id}}), c5_exact(gc)), 1e-12);
    // any permutation gives the same value for a single group
    EXPECT_LT(rel_diff(c7(gc, 3, 5), c5_exact(gc)), 1e-12);
}

TEST(C7, DegenerateAndErrors) {
    ProjectionPair p = standard_hypothesis(HypothesisKind::time, 3, 2);
    EXPECT_EQ(c7(identical_rows({6, 7, 8}, 2), p, 2, 1), 0.0);
    EXPECT_EQ(c7_star(identical_rows({6, 7, 8}, 2), p, 2, 10, 1), 0.0);
    std::mt19937_64 g(41);
    EXPECT_THROW(c7(random_sample({5, 7, 8}, 2, g), p, 1, 1), Error);
}

TEST(C7, Unbiased) {
    SplitPlotDesign des = ar_design({6, 7, 8}, 2, {0.6, 0.65, 0.3});
    ProjectionPair p = standard_hypothesis(HypothesisKind::interaction, 3, 2);
    const double target = direct_trace(p, des, 3);
    expect_unbiased(des, 20000, 42, target,
                    [&](const SplitPlotSample& s, long r) { return c7(s, p, 1, 100 + r); }, "C7");
    expect_unbiased(des, 40000, 43, target,
                    [&](const SplitPlotSample& s, long r) { return c7_star(s, p, 2, 25, 100 + r); }, "C7*");
}

TEST(AStar, ConvergesDegenerateUnbiased) {
    std::mt19937_64 g(44);
    SplitPlotSample s = random_sample({6, 6}, 3, g);
    ProjectionPair p = standard_hypothesis(HypothesisKind::interaction, 2, 3);
    TraceEstimates e = a_star_suite(s, p, 200000, 3);
    EXPECT_LT(rel_diff(e.a4, a4(s, p)), 0.05);
    EXPECT_EQ(e.meta.mode, EstimatorMode::subsampled);
    EXPECT_EQ(a_star_suite(identical_rows({6, 6}, 3), p, 100, 1).a4, 0.0);
    EXPECT_EQ(a_star_suite(s, p, 100, 8).a4, a_star_suite(s, p, 100, 8).a4);

    SplitPlotDesign des = ar_design({6, 8}, 3, {0.6, 0.65});
    expect_unbiased(des, 40000, 45, direct_trace(p, des, 2),
                    [&](const SplitPlotSample& x, long r) { return a_star_suite(x, p, 20, r).a4; }, "A4*");
    Matrix P = centering_matrix(3);
    expect_unbiased(des, 40000, 46, (P * des.covariances[0]).trace(),
                    [&](const SplitPlotSample& x, long r) { return a_star_suite(x, p, 20, r).a1(0); }, "A1*");
}

TEST(TauF, ClampRules) {
    TauF one = tau_f_hat(8.0, 4.0, 2, 10);
    EXPECT_DOUBLE_EQ(one.tau_p_hat, 1.0);
    EXPECT_DOUBLE_EQ(one.f_p_hat, 1.0);
    TauF zero = tau_f_hat(0.0, 4.0, 2, 10);
    EXPECT_DOUBLE_EQ(zero.tau_p_hat, 0.0);
    EXPECT_DOUBLE_EQ(zero.f_p_hat, 20.0);
    TauF big = tau_f_hat(100.0, 1.0, 2, 10);
    EXPECT_DOUBLE_EQ(big.tau_p_hat, 1.0);
    try {
        tau_f_hat(1.0, 0.0, 2, 10);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::degenerate_variance);
    }
}

TEST(TauF, RankOneHypothesisGivesOne) {
    // Group hypothesis with a = 2: T has rank one, so every kernel term is a perfect cube.
    std::mt19937_64 g(47);
    SplitPlotSample s = random_sample({8, 9}, 5, g);
    ProjectionPair p = standard_hypothesis(HypothesisKind::group, 2, 5);
    TraceEstimates e = a_suite(GramCache(s, p));
    e.c5 = c5_star(s, p, 20000, 3);
    TauF tf = tau_f_hat(e);
    EXPECT_GT(tf.tau_p_hat, 0.3);
    EXPECT_GE(tf.f_p_hat, 1.0);
}

TEST(Invariance, ShiftInvariance) {
    std::mt19937_64 g(48);
    for (int rep = 0; rep < 5; ++rep) {
        SplitPlotSample s = random_sample({8, 9}, 3, g);
        SplitPlotSample t = s;
        for (auto& X : t.groups) X.rowwise() += 3.0 * random_matrix(1, 3, g).row(0);
        ProjectionPair p = standard_hypothesis(HypothesisKind::interaction, 2, 3);
        GramCache gs(s, p), gt(t, p);
        TraceEstimates es = a_suite(gs), et = a_suite(gt);
        for (long i = 0; i < 2; ++i) {
            EXPECT_LT(rel_diff(es.a1(i), et.a1(i)), 1e-9);
            EXPECT_LT(rel_diff(es.a3(i), et.a3(i)), 1e-9);
        }
        EXPECT_LT(rel_diff(es.a2(0, 1), et.a2(0, 1)), 1e-9);
        EXPECT_LT(rel_diff(es.a4, et.a4), 1e-9);
        EXPECT_LT(rel_diff(c5_star(gs, 2000, 3), c5_star(gt, 2000, 3)), 1e-9);
        EXPECT_LT(rel_diff(c6_star(gs, 2000, 3), c6_star(gt, 2000, 3)), 1e-9);
        EXPECT_LT(rel_diff(c7(gs, 1, 3, 1e8), c7(gt, 1, 3, 1e8)), 1e-9);
        // definitional forms on raw data
        Matrix P = centering_matrix(3);
        EXPECT_LT(rel_diff(a3_definitional(s.groups[0], P), a3_definitional(t.groups[0], P)), 1e-9);
    }
    std::mt19937_64 h(49);
    SplitPlotSample s = random_sample({6, 6}, 2, h);
    SplitPlotSample t = s;
    t.groups[0].rowwise() += Eigen::RowVector2d(1.0, -2.0);
    ProjectionPair p = standard_hypothesis(HypothesisKind::time, 2, 2);
    EXPECT_LT(rel_diff(c5_exact(s, p), c5_exact(t, p)), 1e-9);
}

TEST(Invariance, ScaleEquivariance) {
    std::mt19937_64 g(50);
    SplitPlotSample s = random_sample({8, 9}, 4, g);
    const double c = 1.7;
    SplitPlotSample t = s;
    for (auto& X : t.groups) X *= c;
    ProjectionPair p = standard_hypothesis(HypothesisKind::interaction, 2, 4);
    GramCache gs(s, p), gt(t, p);
    TraceEstimates es = a_suite(gs), et = a_suite(gt);
    EXPECT_LT(rel_diff(et.a1(0), c * c * es.a1(0)), 1e-12);
    EXPECT_LT(rel_diff(et.a2(0, 1), std::pow(c, 4) * es.a2(0, 1)), 1e-12);
    EXPECT_LT(rel_diff(et.a3(1), std::pow(c, 4) * es.a3(1)), 1e-12);
    EXPECT_LT(rel_diff(et.a4, std::pow(c, 4) * es.a4), 1e-12);
    const double c5s = c5_star(gs, 3000, 1), c5t = c5_star(gt, 3000, 1);
    EXPECT_LT(rel_diff(c5t, std::pow(c, 6) * c5s), 1e-12);
    EXPECT_LT(rel_diff(c6_star(gt, 3000, 1), std::pow(c, 8) * c6_star(gs, 3000, 1)), 1e-12);
    EXPECT_LT(rel_diff(c7_star(gt, 2, 1000, 1), std::pow(c, 6) * c7_star(gs, 2, 1000, 1)), 1e-12);
    TauF fs = tau_f_hat(c5s, es.a4, 2, 4), ft = tau_f_hat(c5t, et.a4, 2, 4);
    EXPECT_LT(rel_diff(fs.tau_p_hat, ft.tau_p_hat), 1e-12);
    EXPECT_LT(rel_diff(fs.f_p_hat, ft.f_p_hat), 1e-12);
}

TEST(Invariance, Nonnegativity) {
    std::mt19937_64 g(51);
    for (int rep = 0; rep < 200; ++rep) {
        const long d = 1 + rep % 5;
        SplitPlotSample s = random_sample({4 + rep % 4, 4 + rep % 6}, d, g);
        Matrix TS = random_projector(d, 1 + rep % d, g);
        ProjectionPair p(centering_matrix(2), TS);
        TraceEstimates e = a_suite(GramCache(s, p));
        EXPECT_GE(e.a2(0, 1), 0.0);
        EXPECT_GE(e.a3(0), -1e-10 * e.a1(0) * e.a1(0));
        EXPECT_GE(e.a4, -1e-12);
        EXPECT_GE(a3_definitional(s.groups[0], TS), 0.0);
    }
}

TEST(GramCache, DimensionMismatch) {
    std::mt19937_64 g(52);
    SplitPlotSample s = random_sample({5, 5}, 3, g);
    try {
        GramCache gc(s, standard_hypothesis(HypothesisKind::time, 2, 4));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::dimension_mismatch);
    }
    EXPECT_THROW(GramCache(s, standard_hypothesis(HypothesisKind::time, 3, 3)), Error);
}
