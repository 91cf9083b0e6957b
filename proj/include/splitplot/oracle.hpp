#ifndef SPLITPLOT_ORACLE_HPP
#define SPLITPLOT_ORACLE_HPP

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "distributions.hpp"
#include "hypothesis.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace splitplot {

namespace detail {

inline void check_design_pair(const ProjectionPair& pair, const SplitPlotDesign& des) {
    des.validate();
    if (pair.a() != des.a() || pair.d() != des.d())
        throw Error(ErrorKind::dimension_mismatch, "hypothesis and design dimensions differ");
}

inline double weight(const SplitPlotDesign& des, long i) {
    return static_cast<double>(des.total()) / static_cast<double>(des.n[i]);
}

}  // namespace detail

inline Matrix v_matrix(const SplitPlotDesign& des, long cap = default_materialization_cap) {
    des.validate();
    const long a = des.a(), d = des.d();
    if (a * d > cap)
        throw Error(ErrorKind::materialization_cap, "V_N would be " + std::to_string(a * d) +
                                                        " rows; use the blockwise trace path");
    Matrix V = Matrix::Zero(a * d, a * d);
    for (long i = 0; i < a; ++i) V.block(i * d, i * d, d, d) = detail::weight(des, i) * des.covariances[i];
    return V;
}

// T V_N assembled from blocks (T_W)_{ir} w_r T_S Sigma_r.
inline Matrix tv_matrix(const ProjectionPair& pair, const SplitPlotDesign& des,
                        long cap = default_materialization_cap) {
    detail::check_design_pair(pair, des);
    const long a = des.a(), d = des.d();
    if (a * d > cap)
        throw Error(ErrorKind::materialization_cap, "T V_N would be " + std::to_string(a * d) +
                                                        " rows; use the blockwise trace path");
    Matrix M(a * d, a * d);
    for (long r = 0; r < a; ++r) {
        const Matrix TS = detail::weight(des, r) * (pair.t_sub() * des.covariances[r]);
        for (long i = 0; i < a; ++i) M.block(i * d, r * d, d, d) = pair.t_whole()(i, r) * TS;
    }
    return M;
}

struct TracePowers {
    double t1 = 0.0, t2 = 0.0, t3 = 0.0, t4 = 0.0;

    double operator[](int k) const { return k == 1 ? t1 : k == 2 ? t2 : k == 3 ? t3 : t4; }
    double tau_p() const { return t3 * t3 / (t2 * t2 * t2); }
    double tau_cq() const { return t4 / (t2 * t2); }
};

// tr((T V_N)^k) for k = 1..4 by repeated products of the materialized matrix.
inline TracePowers trace_powers(const ProjectionPair& pair, const SplitPlotDesign& des,
                                long cap = default_materialization_cap) {
    const Matrix M = tv_matrix(pair, des, cap);
    const Matrix M2 = M * M;
    TracePowers tp;
    tp.t1 = M.trace();
    tp.t2 = M2.trace();
    tp.t3 = M2.cwiseProduct(M.transpose()).sum();
    tp.t4 = M2.cwiseProduct(M2.transpose()).sum();
    return tp;
}

inline double trace_power(const ProjectionPair& pair, const SplitPlotDesign& des, int k,
                          long cap = default_materialization_cap) {
    if (k < 1 || k > 4) throw Error(ErrorKind::unsupported, "trace powers are available for k = 1..4");
    return trace_powers(pair, des, cap)[k];
}

// k = 1, 2 from the blocks only; no materialization.
inline double trace_power_blockwise(const ProjectionPair& pair, const SplitPlotDesign& des, int k) {
    detail::check_design_pair(pair, des);
    const long a = des.a();
    const Matrix& tw = pair.t_whole();
    std::vector<Matrix> ts;
    for (long i = 0; i < a; ++i) ts.push_back(pair.t_sub() * des.covariances[i]);
    if (k == 1) {
        double s = 0.0;
        for (long i = 0; i < a; ++i) s += detail::weight(des, i) * tw(i, i) * ts[i].trace();
        return s;
    }
    if (k == 2) {
        double s = 0.0;
        for (long i = 0; i < a; ++i)
            for (long r = 0; r < a; ++r)
                s += detail::weight(des, i) * detail::weight(des, r) * tw(i, r) * tw(i, r) *
                     ts[i].cwiseProduct(ts[r].transpose()).sum();
        return s;
    }
    throw Error(ErrorKind::materialization_cap, "blockwise traces are implemented for k = 1, 2 only");
}

// tr(T_S Sigma_i T_S Sigma_r) and friends for building per-group oracle values.
inline double trace_ts_sigma(const Matrix& T_S, const Matrix& S) { return (T_S * S).trace(); }

inline double trace_ts_sigma_pair(const Matrix& T_S, const Matrix& Si, const Matrix& Sr) {
    const Matrix A = T_S * Si, Bm = T_S * Sr;
    return A.cwiseProduct(Bm.transpose()).sum();
}

struct MomentPair {
    double mean_q = 0.0;
    double var_q = 0.0;
};

inline MomentPair exact_moments(const ProjectionPair& pair, const SplitPlotDesign& des) {
    return {trace_power_blockwise(pair, des, 1), 2.0 * trace_power_blockwise(pair, des, 2)};
}

inline MomentPair exact_moments_full(const ProjectionPair& pair, const SplitPlotDesign& des,
                                     long cap = default_materialization_cap) {
    const TracePowers tp = trace_powers(pair, des, cap);
    return {tp.t1, 2.0 * tp.t2};
}

struct EigenSpectrum {
    std::vector<double> lambdas;
    std::vector<double> betas;
    bool degenerate = false;

    static EigenSpectrum from_lambdas(std::vector<double> lam) {
        EigenSpectrum sp;
        std::sort(lam.begin(), lam.end(), std::greater<>());
        double lmax = lam.empty() ? 0.0 : std::max(lam.front(), 0.0);
        for (double& l : lam)
            if (l < 0.0) {
                if (l < -1e-10 * std::max(lmax, 1.0))
                    throw Error(ErrorKind::invalid_input, "spectrum has a negative eigenvalue");
                l = 0.0;
            }
        double ss = 0.0;
        for (double l : lam) ss += l * l;
        sp.lambdas = lam;
        sp.degenerate = !(ss > 0.0);
        for (double l : lam) sp.betas.push_back(sp.degenerate ? 0.0 : l / std::sqrt(ss));
        return sp;
    }
};

inline EigenSpectrum eigen_spectrum(const ProjectionPair& pair, const SplitPlotDesign& des,
                                    long cap = default_materialization_cap) {
    const Matrix T = pair.materialize(cap);
    const Matrix V = v_matrix(des, cap);
    Matrix M = T * V * T;
    M = 0.5 * (M + M.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
    const Vector& ev = es.eigenvalues();
    const double lmax = ev.maxCoeff();
    std::vector<double> lam;
    for (Eigen::Index k = 0; k < ev.size(); ++k) lam.push_back(ev(k) < 0 && ev(k) >= -1e-10 * lmax ? 0.0 : ev(k));
    return EigenSpectrum::from_lambdas(lam);
}

inline double tau_p(const ProjectionPair& pair, const SplitPlotDesign& des, long cap = default_materialization_cap) {
    return trace_powers(pair, des, cap).tau_p();
}

enum class FixedTest { psi_z, psi_chi };
enum class LimitRegime { beta1_to_0, beta1_to_1 };

// Level of the fixed-critical-value tests under the two extreme limits of W.
inline double asymptotic_level(FixedTest test, double alpha, LimitRegime regime) {
    check_prob(alpha);
    if (test == FixedTest::psi_z) {
        if (regime == LimitRegime::beta1_to_0) return alpha;
        return chi2_sf(1.0, std::sqrt(2.0) * normal_quantile(1.0 - alpha) + 1.0);
    }
    if (regime == LimitRegime::beta1_to_1) return alpha;
    return normal_sf((chi2_quantile(1.0, 1.0 - alpha) - 1.0) / std::sqrt(2.0));
}

// E((X'TX)^r) for X ~ N(mu, Sigma) via the cumulant recursion.
inline double qf_moment(const Matrix& T, const Matrix& Sigma, const Vector& mu, int r) {
    if (r < 1 || r > 4) throw Error(ErrorKind::unsupported, "quadratic-form moments available for r = 1..4");
    if (max_asymmetry(T) > 1e-10) throw Error(ErrorKind::invalid_input, "T must be symmetric");
    const Matrix A = T * Sigma;
    std::vector<double> g(r);
    Matrix Ak = Matrix::Identity(A.rows(), A.cols());
    double fact = 1.0;
    for (int k = 0; k < r; ++k) {
        if (k > 0) fact *= k;
        const double trace_next = (Ak * A).trace();
        const double mterm = mu.dot(Ak * T * mu);
        g[k] = std::pow(2.0, k) * fact * (trace_next + (k + 1) * mterm);
        Ak = Ak * A;
    }
    std::vector<double> m(r + 1, 0.0);
    m[0] = 1.0;
    for (int q = 1; q <= r; ++q) {
        double s = 0.0;
        double binom = 1.0;
        for (int j = 0; j <= q - 1; ++j) {
            s += binom * g[q - 1 - j] * m[j];
            binom = binom * (q - 1 - j) / (j + 1);
        }
        m[q] = s;
    }
    return m[r];
}

// E((X'TY)^k) for independent zero-mean X ~ N(0, Sx), Y ~ N(0, Sy).
inline double bilinear_moment(const Matrix& T, const Matrix& Sx, const Matrix& Sy, int k) {
    if (k < 1 || k > 4) throw Error(ErrorKind::unsupported, "bilinear moments available for k = 1..4");
    if (k % 2 == 1) return 0.0;
    const Matrix P = T * Sx * T * Sy;
    const double t = P.trace();
    if (k == 2) return t;
    return 6.0 * (P * P).trace() + 3.0 * t * t;
}

// Draws of sum_s beta_s (C_s - 1)/sqrt(2), C_s iid chi^2_1.
inline std::vector<double> representation_sampler(const EigenSpectrum& sp, long reps, std::uint64_t seed) {
    std::vector<double> active;
    for (double b : sp.betas)
        if (b != 0.0) active.push_back(b);
    std::vector<double> out(reps);
    for (long r = 0; r < reps; ++r) {
        CounterRng rng = substream(seed, {static_cast<std::uint64_t>(r)});
        std::normal_distribution<double> nd;
        double s = 0.0;
        for (double b : active) {
            const double z = nd(rng);
            s += b * (z * z - 1.0);
        }
        out[r] = s / std::sqrt(2.0);
    }
    return out;
}

struct InequalityReport {
    long instances = 0;
    long checks = 0;
    long violations = 0;
    double min_slack = INFINITY;
    std::string first_violation;
};

// Random SPD matrices and projectors; checks the power-trace inequalities used for
// ratio consistency. Slack is (rhs - lhs) / max(1, |rhs|).
inline InequalityReport trace_inequality_checks(long instances, long d_max, std::uint64_t seed) {
    InequalityReport rep;
    auto record = [&](double lhs, double rhs, const std::string& what) {
        const double slack = (rhs - lhs) / std::max(1.0, std::abs(rhs));
        ++rep.checks;
        rep.min_slack = std::min(rep.min_slack, slack);
        if (slack < -1e-9) {
            ++rep.violations;
            if (rep.first_violation.empty()) rep.first_violation = what;
        }
    };
    for (long inst = 0; inst < instances; ++inst) {
        CounterRng rng = substream(seed, {static_cast<std::uint64_t>(inst)});
        std::normal_distribution<double> nd;
        const long d = 1 + static_cast<long>(rng.below(static_cast<std::uint64_t>(d_max)));
        auto spd = [&] {
            Matrix L(d, d);
            for (long i = 0; i < d; ++i)
                for (long j = 0; j < d; ++j) L(i, j) = nd(rng);
            return Matrix(L * L.transpose() + 0.1 * Matrix::Identity(d, d));
        };
        const Matrix Si = spd(), Sr = spd();
        const long rows = 1 + static_cast<long>(rng.below(static_cast<std::uint64_t>(d)));
        Matrix H(rows, d);
        for (long i = 0; i < rows; ++i)
            for (long j = 0; j < d; ++j) H(i, j) = nd(rng);
        const Matrix T = projector_from_hypothesis(H);

        Eigen::SelfAdjointEigenSolver<Matrix> es(Si);
        const Matrix root = es.operatorSqrt();
        Matrix S = root * T * root;
        Eigen::SelfAdjointEigenSolver<Matrix> eS(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
        Vector lam = eS.eigenvalues().cwiseMax(0.0);
        auto trp = [&](double p) { return lam.array().pow(p).sum(); };
        const double pa = 0.25 + 2.75 * rng.uniform(), pb = 0.25 + 2.75 * rng.uniform();
        record(std::pow(trp(pa + pb), 2), trp(2 * pa) * trp(2 * pb), "tr^2(A^(a+b)) <= tr(A^2a) tr(A^2b)");
        record(trp(2.0), std::pow(trp(1.0), 2), "tr(A^2) <= tr^2(A)");

        const Matrix A = T * Si;
        const Matrix A2 = A * A;
        record(A2.trace(), std::pow(A.trace(), 2), "tr((T S)^2) <= tr^2(T S)");
        record((A2 * A2).trace(), std::pow(A2.trace(), 2), "tr((T S)^4) <= tr^2((T S)^2)");
        const Matrix P = T * Si * T * Sr;
        record((P * P).trace(), std::pow(P.trace(), 2), "tr((T Si T Sr)^2) <= tr^2(T Si T Sr)");
        ++rep.instances;
    }
    return rep;
}

}  // namespace splitplot

#endif
