#ifndef SPLITPLOT_MODEL_HPP
#define SPLITPLOT_MODEL_HPP

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "linalg.hpp"
#include "rng.hpp"

namespace splitplot {

inline Matrix ar1_covariance(long d, double rho) {
    if (d < 1) throw Error(ErrorKind::invalid_dimension, "d must be >= 1");
    if (!(std::abs(rho) < 1.0)) throw Error(ErrorKind::invalid_parameter, "AR(1) needs |rho| < 1");
    Matrix S(d, d);
    for (long i = 0; i < d; ++i)
        for (long j = 0; j < d; ++j) S(i, j) = std::pow(rho, std::abs(i - j));
    return S;
}

struct SplitPlotDesign {
    std::vector<long> n;
    Matrix means;                     // a x d, row i is mu_i
    std::vector<Matrix> covariances;  // a blocks of d x d

    long a() const { return static_cast<long>(n.size()); }
    long d() const { return static_cast<long>(means.cols()); }
    long total() const {
        long s = 0;
        for (long v : n) s += v;
        return s;
    }

    void validate() const {
        if (a() < 1) throw Error(ErrorKind::invalid_dimension, "design needs a >= 1");
        if (d() < 1) throw Error(ErrorKind::invalid_dimension, "design needs d >= 1");
        if (means.rows() != a() || static_cast<long>(covariances.size()) != a())
            throw Error(ErrorKind::dimension_mismatch, "means/covariances do not match group count");
        for (long i = 0; i < a(); ++i) {
            if (n[i] < 2) throw Error(ErrorKind::insufficient_sample, "every group needs n_i >= 2");
            const Matrix& S = covariances[i];
            if (S.rows() != d() || S.cols() != d())
                throw Error(ErrorKind::dimension_mismatch, "covariance " + std::to_string(i + 1) + " is not d x d");
            if (!S.allFinite() || max_asymmetry(S) > 1e-10)
                throw Error(ErrorKind::invalid_input, "covariance " + std::to_string(i + 1) + " is not symmetric");
        }
        if (!means.allFinite()) throw Error(ErrorKind::invalid_input, "non-finite means");
    }

    static SplitPlotDesign homogeneous_means(std::vector<long> n, std::vector<Matrix> covs) {
        SplitPlotDesign des;
        des.n = std::move(n);
        des.covariances = std::move(covs);
        long d = des.covariances.empty() ? 0 : des.covariances[0].rows();
        des.means = Matrix::Zero(static_cast<long>(des.n.size()), d);
        return des;
    }
};

struct SplitPlotSample {
    std::vector<Matrix> groups;  // n_i x d

    long a() const { return static_cast<long>(groups.size()); }
    long d() const { return groups.empty() ? 0 : groups[0].cols(); }
    std::vector<long> n() const {
        std::vector<long> out;
        for (const auto& g : groups) out.push_back(g.rows());
        return out;
    }
    long total() const {
        long s = 0;
        for (const auto& g : groups) s += g.rows();
        return s;
    }
    long n_min() const {
        long m = groups.empty() ? 0 : groups[0].rows();
        for (const auto& g : groups) m = std::min<long>(m, g.rows());
        return m;
    }

    void validate() const {
        if (groups.empty()) throw Error(ErrorKind::invalid_dimension, "sample has no groups");
        for (std::size_t i = 0; i < groups.size(); ++i) {
            if (groups[i].cols() != d() || d() < 1)
                throw Error(ErrorKind::dimension_mismatch, "group " + std::to_string(i + 1) + " has wrong width");
            if (groups[i].rows() < 1)
                throw Error(ErrorKind::insufficient_sample, "group " + std::to_string(i + 1) + " is empty");
            if (!groups[i].allFinite())
                throw Error(ErrorKind::invalid_input, "group " + std::to_string(i + 1) + " has non-finite entries");
        }
    }
};

// Holds Cholesky factors so repeated draws from one design avoid refactorizing.
class GaussianSampler {
public:
    explicit GaussianSampler(SplitPlotDesign design) : design_(std::move(design)) {
        design_.validate();
        for (long i = 0; i < design_.a(); ++i) {
            Eigen::LLT<Matrix> llt(design_.covariances[i]);
            if (llt.info() != Eigen::Success)
                throw Error(ErrorKind::not_positive_definite,
                            "covariance " + std::to_string(i + 1) + " is not positive definite");
            chol_.push_back(llt.matrixL());
        }
    }

    const SplitPlotDesign& design() const { return design_; }

    SplitPlotSample draw(std::uint64_t seed, std::uint64_t rep = 0) const {
        const long d = design_.d();
        SplitPlotSample s;
        Vector z(d);
        for (long i = 0; i < design_.a(); ++i) {
            Matrix Xi(design_.n[i], d);
            for (long j = 0; j < design_.n[i]; ++j) {
                CounterRng rng = substream(seed, {rep, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j)});
                std::normal_distribution<double> nd;
                for (long t = 0; t < d; ++t) z(t) = nd(rng);
                Xi.row(j) = (chol_[i] * z + design_.means.row(i).transpose()).transpose();
            }
            s.groups.push_back(std::move(Xi));
        }
        return s;
    }

private:
    SplitPlotDesign design_;
    std::vector<Matrix> chol_;
};

inline SplitPlotSample sample(const SplitPlotDesign& design, std::uint64_t seed, std::uint64_t rep = 0) {
    return GaussianSampler(design).draw(seed, rep);
}

inline Vector pooled_mean(const SplitPlotSample& s) {
    const long d = s.d();
    Vector m(s.a() * d);
    for (long i = 0; i < s.a(); ++i) m.segment(i * d, d) = s.groups[i].colwise().mean().transpose();
    return m;
}

}  // namespace splitplot

#endif
