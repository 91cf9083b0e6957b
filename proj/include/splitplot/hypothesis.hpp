#ifndef SPLITPLOT_HYPOTHESIS_HPP
#define SPLITPLOT_HYPOTHESIS_HPP

#include <string>
#include <vector>

#include "linalg.hpp"

namespace splitplot {

inline Matrix centering_matrix(long k) {
    if (k < 1) throw Error(ErrorKind::invalid_dimension, "centering matrix needs k >= 1");
    return Matrix::Identity(k, k) - Matrix::Constant(k, k, 1.0 / static_cast<double>(k));
}

inline Matrix averaging_matrix(long k) {
    if (k < 1) throw Error(ErrorKind::invalid_dimension, "averaging matrix needs k >= 1");
    return Matrix::Constant(k, k, 1.0 / static_cast<double>(k));
}

// l is 1-based.
inline Matrix unit_projector(long k, long l) {
    if (k < 1) throw Error(ErrorKind::invalid_dimension, "unit projector needs k >= 1");
    if (l < 1 || l > k)
        throw Error(ErrorKind::index_out_of_range,
                    "index " + std::to_string(l) + " outside 1.." + std::to_string(k));
    Matrix E = Matrix::Zero(k, k);
    E(l - 1, l - 1) = 1.0;
    return E;
}

inline Matrix projector_from_hypothesis(const Matrix& H) {
    if (H.rows() < 1 || H.cols() < 1)
        throw Error(ErrorKind::invalid_dimension, "hypothesis matrix is empty");
    if (!H.allFinite()) throw Error(ErrorKind::invalid_input, "hypothesis matrix has non-finite entries");
    // H'(HH')^+ H from the right singular vectors; sigma^2 cutoff 1e-12 relative
    Eigen::BDCSVD<Matrix> svd(H, Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    long r = 0;
    while (r < sv.size() && sv(0) > 0.0 && sv(r) > 1e-6 * sv(0)) ++r;
    const Matrix V = svd.matrixV().leftCols(r);
    Matrix T = V * V.transpose();
    return 0.5 * (T + T.transpose());
}

// T = T_W (x) T_S, kept as a pair. The sub-plot block also carries an orthonormal
// basis F of its range (T_S = F F^T) used to form Gram matrices cheaply.
class ProjectionPair {
public:
    ProjectionPair() = default;

    ProjectionPair(Matrix t_whole, Matrix t_sub) : tw_(std::move(t_whole)), ts_(std::move(t_sub)) {
        check_block(tw_, "whole-plot");
        check_block(ts_, "sub-plot");
        Eigen::SelfAdjointEigenSolver<Matrix> es(ts_);
        std::vector<Eigen::Index> keep;
        for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k)
            if (es.eigenvalues()(k) > 0.5) keep.push_back(k);
        sub_basis_.resize(ts_.rows(), static_cast<Eigen::Index>(keep.size()));
        for (std::size_t c = 0; c < keep.size(); ++c)
            sub_basis_.col(static_cast<Eigen::Index>(c)) = es.eigenvectors().col(keep[c]);
    }

    const Matrix& t_whole() const { return tw_; }
    const Matrix& t_sub() const { return ts_; }
    const Matrix& sub_basis() const { return sub_basis_; }
    long a() const { return static_cast<long>(tw_.rows()); }
    long d() const { return static_cast<long>(ts_.rows()); }
    long sub_rank() const { return static_cast<long>(sub_basis_.cols()); }

    Matrix materialize(long cap = default_materialization_cap) const {
        if (a() * d() > cap)
            throw Error(ErrorKind::materialization_cap,
                        "a*d = " + std::to_string(a() * d()) + " exceeds cap " + std::to_string(cap) +
                            "; use the blockwise path");
        return kron(tw_, ts_);
    }

private:
    static void check_block(const Matrix& M, const char* what) {
        if (M.rows() < 1 || M.rows() != M.cols())
            throw Error(ErrorKind::invalid_dimension, std::string(what) + " projector must be square");
        if (!M.allFinite()) throw Error(ErrorKind::invalid_input, std::string(what) + " projector not finite");
        if (max_asymmetry(M) > 1e-10)
            throw Error(ErrorKind::invalid_input, std::string(what) + " projector not symmetric");
        if (max_idempotence_error(M) > 1e-8)
            throw Error(ErrorKind::invalid_input, std::string(what) + " projector not idempotent");
    }

    Matrix tw_;
    Matrix ts_;
    Matrix sub_basis_;
};

inline ProjectionPair kron_pair_projector(const Matrix& H_W, const Matrix& H_S) {
    return ProjectionPair(projector_from_hypothesis(H_W), projector_from_hypothesis(H_S));
}

// Sub-plot layout: `levels` interventions crossed with `times` time points, d = levels * times.
struct SubplotStructure {
    long levels = 1;
    long times = 1;
    long d() const { return levels * times; }

    static SubplotStructure plain(long d) { return {1, d}; }
    static SubplotStructure parse(const std::string& text) {
        auto x = text.find_first_of("xX");
        try {
            if (x == std::string::npos) return plain(std::stol(text));
            return {std::stol(text.substr(0, x)), std::stol(text.substr(x + 1))};
        } catch (const std::exception&) {
            throw Error(ErrorKind::parse_error, "sub-plot structure '" + text + "' is not of the form LxS or D");
        }
    }
};

enum class HypothesisKind { group, time, interaction, time_within, between_interventions };

struct HypothesisSpec {
    HypothesisKind kind = HypothesisKind::group;
    long l = 0;
    long k = 0;

    std::string name() const {
        switch (kind) {
        case HypothesisKind::group: return "group";
        case HypothesisKind::time: return "time";
        case HypothesisKind::interaction: return "interaction";
        case HypothesisKind::time_within: return "time_within:" + std::to_string(l);
        case HypothesisKind::between_interventions:
            return "between_interventions:" + std::to_string(l) + ":" + std::to_string(k);
        }
        return "";
    }

    // Accepts group|time|interaction|time_within:L|between_interventions:L:K.
    static HypothesisSpec parse(const std::string& text) {
        std::vector<std::string> parts;
        std::size_t start = 0;
        while (true) {
            auto pos = text.find(':', start);
            parts.push_back(text.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
        auto num = [&](std::size_t idx) -> long {
            try {
                return std::stol(parts.at(idx));
            } catch (const std::exception&) {
                throw Error(ErrorKind::parse_error, "hypothesis '" + text + "' has a bad index");
            }
        };
        const std::string& head = parts[0];
        if (head == "group" && parts.size() == 1) return {HypothesisKind::group};
        if (head == "time" && parts.size() == 1) return {HypothesisKind::time};
        if (head == "interaction" && parts.size() == 1) return {HypothesisKind::interaction};
        if (head == "time_within" && parts.size() == 2) return {HypothesisKind::time_within, num(1)};
        if (head == "between_interventions" && parts.size() == 3)
            return {HypothesisKind::between_interventions, num(1), num(2)};
        throw Error(ErrorKind::parse_error, "unknown hypothesis '" + text + "'");
    }
};

inline ProjectionPair standard_hypothesis(const HypothesisSpec& spec, long a, const SubplotStructure& st) {
    const long d = st.d();
    if (a < 1 || d < 1) throw Error(ErrorKind::invalid_dimension, "a and d must be positive");
    auto need_groups = [&] {
        if (a < 2) throw Error(ErrorKind::invalid_dimension, spec.name() + " needs a >= 2");
    };
    switch (spec.kind) {
    case HypothesisKind::group:
        need_groups();
        return ProjectionPair(centering_matrix(a), averaging_matrix(d));
    case HypothesisKind::time:
        return ProjectionPair(averaging_matrix(a), centering_matrix(d));
    case HypothesisKind::interaction:
        need_groups();
        return ProjectionPair(centering_matrix(a), centering_matrix(d));
    case HypothesisKind::time_within:
        need_groups();
        return ProjectionPair(centering_matrix(a),
                              kron(unit_projector(st.levels, spec.l), centering_matrix(st.times)));
    case HypothesisKind::between_interventions: {
        need_groups();
        if (spec.l == spec.k)
            throw Error(ErrorKind::index_out_of_range, "between_interventions needs two different levels");
        Matrix block = unit_projector(st.levels, spec.l);
        if (spec.k < 1 || spec.k > st.levels)
            throw Error(ErrorKind::index_out_of_range,
                        "index " + std::to_string(spec.k) + " outside 1.." + std::to_string(st.levels));
        block(spec.l - 1, spec.k - 1) -= 1.0;
        Matrix H_S = kron(block, averaging_matrix(st.times));
        return ProjectionPair(centering_matrix(a), projector_from_hypothesis(H_S));
    }
    }
    throw Error(ErrorKind::invalid_input, "unknown hypothesis kind");
}

inline ProjectionPair standard_hypothesis(HypothesisKind kind, long a, long d) {
    return standard_hypothesis(HypothesisSpec{kind}, a, SubplotStructure::plain(d));
}

// Standard hypotheses of a two-factor sub-plot layout: group, time, interaction,
// time within each level, and every pair of levels (13 for four levels).
inline std::vector<HypothesisSpec> all_standard_hypotheses(const SubplotStructure& st) {
    std::vector<HypothesisSpec> out{{HypothesisKind::group}, {HypothesisKind::time}, {HypothesisKind::interaction}};
    for (long l = 1; l <= st.levels; ++l) out.push_back({HypothesisKind::time_within, l});
    for (long l = 1; l <= st.levels; ++l)
        for (long k = l + 1; k <= st.levels; ++k) out.push_back({HypothesisKind::between_interventions, l, k});
    return out;
}

struct EffectDecomposition {
    double grand_mean = 0.0;
    Vector group_effects;
    Vector time_effects;
    Matrix interactions;

    Matrix reconstruct() const {
        Matrix mu = interactions;
        mu.array() += grand_mean;
        mu.colwise() += group_effects;
        mu.rowwise() += time_effects.transpose();
        return mu;
    }
};

inline EffectDecomposition decompose_effects(const Matrix& mu) {
    if (!mu.allFinite()) throw Error(ErrorKind::invalid_input, "mean matrix has non-finite entries");
    if (mu.size() == 0) throw Error(ErrorKind::invalid_dimension, "empty mean matrix");
    EffectDecomposition e;
    e.grand_mean = mu.mean();
    e.group_effects = mu.rowwise().mean().array() - e.grand_mean;
    e.time_effects = mu.colwise().mean().transpose().array() - e.grand_mean;
    e.interactions = mu;
    e.interactions.colwise() -= e.group_effects;
    e.interactions.rowwise() -= e.time_effects.transpose();
    e.interactions.array() -= e.grand_mean;
    return e;
}

}  // namespace splitplot

#endif
