#ifndef SPLITPLOT_TRACE_ESTIMATORS_HPP
#define SPLITPLOT_TRACE_ESTIMATORS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "hypothesis.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace splitplot {

constexpr double default_work_cap = 1e7;

enum class EstimatorMode { exact, efficient, subsampled };

inline const char* to_string(EstimatorMode m) {
    switch (m) {
    case EstimatorMode::exact: return "exact";
    case EstimatorMode::efficient: return "efficient";
    case EstimatorMode::subsampled: return "subsampled";
    }
    return "unknown";
}

struct EstimateMeta {
    EstimatorMode mode = EstimatorMode::efficient;
    long B = 0;
    long w = 0;
    std::uint64_t seed = 0;
};

struct TraceEstimates {
    Vector a1;  // A_{i,1}
    Matrix a2;  // off-diagonal A_{i,r,2}; zero diagonal
    Vector a3;  // A_{i,3}
    double a4 = 0.0;
    std::optional<double> c5;
    std::optional<double> c6;
    std::optional<double> c7;
    double tau_p_hat = std::numeric_limits<double>::quiet_NaN();
    double f_p_hat = std::numeric_limits<double>::quiet_NaN();
    long a = 0;
    long d = 0;
    EstimateMeta meta;
};

namespace detail {

inline Matrix center_rows(const Matrix& X) {
    Matrix Xc = X;
    Xc.rowwise() -= X.colwise().mean();
    return Xc;
}

inline void require_rows(long n, long need, const char* what) {
    if (n < need)
        throw Error(ErrorKind::insufficient_sample,
                    std::string(what) + " needs n_i >= " + std::to_string(need) + ", got " + std::to_string(n));
}

inline double falling(long n, long k) {
    double v = 1.0;
    for (long t = 0; t < k; ++t) v *= static_cast<double>(n - t);
    return v;
}

// Closed forms on a Gram matrix of within-group centred data.
inline double a1_gram(const Matrix& G) {
    const double n = static_cast<double>(G.rows());
    return (G.trace() - G.sum() / n) / (n - 1.0);
}

inline double a2_gram_centered(const Matrix& G) {
    return G.squaredNorm() / (static_cast<double>(G.rows() - 1) * static_cast<double>(G.cols() - 1));
}

inline double a3_gram(const Matrix& G) {
    const double n = static_cast<double>(G.rows());
    Matrix O = G;
    O.diagonal().setZero();
    const double q2 = O.squaredNorm();
    const Vector r = O.rowwise().sum();
    const double s = r.sum();
    const double p3 = r.squaredNorm() - q2;
    const double s4 = s * s - 4.0 * p3 - 2.0 * q2;
    const double num = (n - 2.0) * (n - 3.0) * q2 - 2.0 * (n - 3.0) * p3 + s4;
    return num / (n * (n - 1.0) * (n - 2.0) * (n - 3.0));
}

}  // namespace detail

inline double a1(const Matrix& X, const Matrix& T_S) {
    detail::require_rows(X.rows(), 2, "A1");
    Matrix Xc = detail::center_rows(X);
    return detail::a1_gram(Xc * T_S * Xc.transpose());
}

inline double a2(const Matrix& Xi, const Matrix& Xr, const Matrix& T_S) {
    detail::require_rows(Xi.rows(), 2, "A2");
    detail::require_rows(Xr.rows(), 2, "A2");
    return detail::a2_gram_centered(detail::center_rows(Xi) * T_S * detail::center_rows(Xr).transpose());
}

inline double a3(const Matrix& X, const Matrix& T_S) {
    detail::require_rows(X.rows(), 4, "A3");
    Matrix Xc = detail::center_rows(X);
    return detail::a3_gram(Xc * T_S * Xc.transpose());
}

// Quadruple sum over l1 > l2, k1 > k2 of [Y_{l1 l2}' T_S Y_{k1 k2}]^2.
inline double a2_definitional(const Matrix& Xi, const Matrix& Xr, const Matrix& T_S) {
    detail::require_rows(Xi.rows(), 2, "A2");
    detail::require_rows(Xr.rows(), 2, "A2");
    const long ni = Xi.rows(), nr = Xr.rows();
    KahanSum acc;
    for (long l1 = 0; l1 < ni; ++l1)
        for (long l2 = 0; l2 < l1; ++l2) {
            Vector y = T_S * (Xi.row(l1) - Xi.row(l2)).transpose();
            for (long k1 = 0; k1 < nr; ++k1)
                for (long k2 = 0; k2 < k1; ++k2) {
                    double v = y.dot((Xr.row(k1) - Xr.row(k2)).transpose());
                    acc.add(v * v);
                }
        }
    return acc.value() / (4.0 * (ni * (ni - 1) / 2.0) * (nr * (nr - 1) / 2.0));
}

// Sum over l1 > l2, k1 > k2 with all four indices distinct.
inline double a3_definitional(const Matrix& X, const Matrix& T_S) {
    detail::require_rows(X.rows(), 4, "A3");
    const long n = X.rows();
    KahanSum acc;
    long count = 0;
    for (long l1 = 0; l1 < n; ++l1)
        for (long l2 = 0; l2 < l1; ++l2) {
            Vector y = T_S * (X.row(l1) - X.row(l2)).transpose();
            for (long k1 = 0; k1 < n; ++k1) {
                if (k1 == l1 || k1 == l2) continue;
                for (long k2 = 0; k2 < k1; ++k2) {
                    if (k2 == l1 || k2 == l2) continue;
                    double v = y.dot((X.row(k1) - X.row(k2)).transpose());
                    acc.add(v * v);
                    ++count;
                }
            }
        }
    return acc.value() / (4.0 * static_cast<double>(count));
}

// Gram matrix of group-centred, sub-plot-projected observations for the whole sample,
// plus the whole-plot weights that turn it into bilinear forms Z_p' T Z_q.
class GramCache {
public:
    GramCache(const SplitPlotSample& s, const ProjectionPair& pair) {
        s.validate();
        if (s.a() != pair.a())
            throw Error(ErrorKind::dimension_mismatch, "sample has " + std::to_string(s.a()) +
                                                           " groups but hypothesis expects " + std::to_string(pair.a()));
        if (s.d() != pair.d())
            throw Error(ErrorKind::dimension_mismatch, "sample has d = " + std::to_string(s.d()) +
                                                           " but hypothesis expects " + std::to_string(pair.d()));
        a_ = s.a();
        d_ = s.d();
        n_ = s.n();
        N_ = s.total();
        const Matrix& F = pair.sub_basis();
        Matrix U(N_, F.cols());
        long off = 0;
        for (long i = 0; i < a_; ++i) {
            offset_.push_back(off);
            U.middleRows(off, n_[i]) = detail::center_rows(s.groups[i]) * F;
            off += n_[i];
        }
        G_ = U * U.transpose();
        tw_ = pair.t_whole();
        for (long i = 0; i < a_; ++i)
            for (long r = 0; r < a_; ++r) {
                double c = tw_(i, r) * static_cast<double>(N_) / std::sqrt(static_cast<double>(n_[i] * n_[r]));
                if (c != 0.0) terms_.push_back({i, r, c});
            }
    }

    long a() const { return a_; }
    long d() const { return d_; }
    long N() const { return N_; }
    const std::vector<long>& n() const { return n_; }
    long offset(long i) const { return offset_[i]; }
    long n_min() const { return *std::min_element(n_.begin(), n_.end()); }
    const Matrix& gram() const { return G_; }
    const Matrix& t_whole() const { return tw_; }

    Matrix block(long i, long r) const { return G_.block(offset_[i], offset_[r], n_[i], n_[r]); }

    double g(long p, long q) const { return G_(p, q); }

    // Difference kernel (x_p1 - x_p2)' T_S (x_q1 - x_q2) on global row indices.
    double diff(long p1, long p2, long q1, long q2) const {
        return G_(p1, q1) - G_(p1, q2) - G_(p2, q1) + G_(p2, q2);
    }

    // Z_s' T Z_t where tup holds k global indices per group and slot s uses entries 2s, 2s+1.
    double lambda(const long* tup, long k, long s, long t) const {
        double acc = 0.0;
        for (const auto& tm : terms_) {
            const long* p = tup + tm.i * k + 2 * s;
            const long* q = tup + tm.r * k + 2 * t;
            acc += tm.c * diff(p[0], p[1], q[0], q[1]);
        }
        return acc;
    }

private:
    struct Term {
        long i;
        long r;
        double c;
    };
    long a_ = 0, d_ = 0, N_ = 0;
    std::vector<long> n_;
    std::vector<long> offset_;
    Matrix G_;
    Matrix tw_;
    std::vector<Term> terms_;
};

namespace detail {

inline double a4_from(const GramCache& gc, const Vector& a3v, const Matrix& a2m) {
    const double N = static_cast<double>(gc.N());
    const Matrix& tw = gc.t_whole();
    double s = 0.0;
    for (long i = 0; i < gc.a(); ++i) {
        const double ni = static_cast<double>(gc.n()[i]);
        s += (N / ni) * (N / ni) * tw(i, i) * tw(i, i) * a3v(i);
        for (long r = 0; r < i; ++r) {
            const double nr = static_cast<double>(gc.n()[r]);
            s += 2.0 * N * N / (ni * nr) * tw(i, r) * tw(i, r) * a2m(i, r);
        }
    }
    return s;
}

inline Vector a1_all(const GramCache& gc) {
    Vector v(gc.a());
    for (long i = 0; i < gc.a(); ++i) {
        require_rows(gc.n()[i], 2, "A1");
        v(i) = a1_gram(gc.block(i, i));
    }
    return v;
}

inline Matrix a2_all(const GramCache& gc) {
    Matrix m = Matrix::Zero(gc.a(), gc.a());
    for (long i = 0; i < gc.a(); ++i)
        for (long r = 0; r < i; ++r) {
            if (gc.t_whole()(i, r) == 0.0) continue;
            require_rows(gc.n()[i], 2, "A2");
            require_rows(gc.n()[r], 2, "A2");
            m(i, r) = m(r, i) = a2_gram_centered(gc.block(i, r));
        }
    return m;
}

inline Vector a3_all(const GramCache& gc) {
    Vector v = Vector::Zero(gc.a());
    for (long i = 0; i < gc.a(); ++i) {
        if (gc.t_whole()(i, i) == 0.0) continue;
        require_rows(gc.n()[i], 4, "A3");
        v(i) = a3_gram(gc.block(i, i));
    }
    return v;
}

// All ordered k-tuples of distinct values from {0..n-1}, flattened.
inline std::vector<long> ordered_tuples(long n, long k) {
    std::vector<long> out;
    std::vector<long> cur(k);
    std::vector<char> used(n, 0);
    auto rec = [&](auto&& self, long depth) -> void {
        if (depth == k) {
            out.insert(out.end(), cur.begin(), cur.end());
            return;
        }
        for (long v = 0; v < n; ++v) {
            if (used[v]) continue;
            used[v] = 1;
            cur[depth] = v;
            self(self, depth + 1);
            used[v] = 0;
        }
    };
    rec(rec, 0);
    return out;
}

// Draws k distinct entries of pool (ordered, uniform) and restores pool afterwards.
inline void draw_distinct(CounterRng& rng, std::vector<long>& pool, long k, long* out) {
    const long n = static_cast<long>(pool.size());
    long swaps[16];
    for (long t = 0; t < k; ++t) {
        long j = t + static_cast<long>(rng.below(static_cast<std::uint64_t>(n - t)));
        std::swap(pool[t], pool[j]);
        swaps[t] = j;
        out[t] = pool[t];
    }
    for (long t = k - 1; t >= 0; --t) std::swap(pool[t], pool[swaps[t]]);
}

inline void check_cap(double work, double cap, const char* what) {
    if (work > cap)
        throw Error(ErrorKind::work_cap_exceeded, std::string(what) + " needs " + std::to_string(work) +
                                                      " tuple evaluations (cap " + std::to_string(cap) +
                                                      "); use the subsampled estimator");
}

// Sums kernel(tup) over the Cartesian product of per-group ordered k-tuples.
template <class Kernel>
double sum_over_group_tuples(const GramCache& gc, long k, Kernel&& kernel) {
    const long a = gc.a();
    std::vector<std::vector<long>> lists;
    std::vector<long> counts;
    for (long i = 0; i < a; ++i) {
        lists.push_back(ordered_tuples(gc.n()[i], k));
        counts.push_back(static_cast<long>(lists.back().size()) / k);
    }
    std::vector<long> odo(a, 0);
    std::vector<long> tup(a * k);
    KahanSum acc;
    while (true) {
        for (long i = 0; i < a; ++i)
            for (long t = 0; t < k; ++t) tup[i * k + t] = gc.offset(i) + lists[i][odo[i] * k + t];
        acc.add(kernel(tup.data()));
        long i = 0;
        while (i < a && ++odo[i] == counts[i]) odo[i++] = 0;
        if (i == a) break;
    }
    return acc.value();
}

// Sums kernel over B draws of independent per-group ordered k-subsamples.
template <class Kernel>
double sum_over_subsamples(const GramCache& gc, long k, long B, std::uint64_t seed, Kernel&& kernel) {
    const long a = gc.a();
    std::vector<std::vector<long>> pools(a);
    for (long i = 0; i < a; ++i) {
        pools[i].resize(gc.n()[i]);
        std::iota(pools[i].begin(), pools[i].end(), gc.offset(i));
    }
    std::vector<long> tup(a * k);
    KahanSum acc;
    for (long b = 0; b < B; ++b) {
        CounterRng rng = substream(seed, {static_cast<std::uint64_t>(b)});
        for (long i = 0; i < a; ++i) draw_distinct(rng, pools[i], k, tup.data() + i * k);
        acc.add(kernel(tup.data()));
    }
    return acc.value();
}

inline double c5_kernel(const GramCache& gc, const long* tup) {
    return gc.lambda(tup, 6, 0, 1) * gc.lambda(tup, 6, 1, 2) * gc.lambda(tup, 6, 2, 0);
}

inline double c6_kernel(const GramCache& gc, const long* tup) {
    const double l = gc.lambda(tup, 8, 0, 1);
    const double m = gc.lambda(tup, 8, 2, 3);
    const double l2 = l * l;
    return l2 * l2 / 6.0 - l2 * m * m / 2.0;
}

inline void require_all(const GramCache& gc, long need, const char* what) {
    for (long i = 0; i < gc.a(); ++i) require_rows(gc.n()[i], need, what);
}

inline void require_B(long B) {
    if (B < 1) throw Error(ErrorKind::invalid_parameter, "B must be >= 1");
}

}  // namespace detail

inline double a4(const SplitPlotSample& s, const ProjectionPair& pair) {
    GramCache gc(s, pair);
    return detail::a4_from(gc, detail::a3_all(gc), detail::a2_all(gc));
}

inline double e_hat_q(const GramCache& gc) {
    Vector v = detail::a1_all(gc);
    double e = 0.0;
    for (long i = 0; i < gc.a(); ++i)
        e += static_cast<double>(gc.N()) / static_cast<double>(gc.n()[i]) * gc.t_whole()(i, i) * v(i);
    return e;
}

inline double e_hat_q(const SplitPlotSample& s, const ProjectionPair& pair) { return e_hat_q(GramCache(s, pair)); }

inline double c5_exact(const GramCache& gc, double cap = default_work_cap) {
    detail::require_all(gc, 6, "C5");
    double work = 1.0;
    for (long ni : gc.n()) work *= detail::falling(ni, 6);
    detail::check_cap(work, cap, "exact C5");
    double s = detail::sum_over_group_tuples(gc, 6, [&](const long* t) { return detail::c5_kernel(gc, t); });
    return s / (8.0 * work);
}

inline double c5_star(const GramCache& gc, long B, std::uint64_t seed) {
    detail::require_all(gc, 6, "C5*");
    detail::require_B(B);
    double s = detail::sum_over_subsamples(gc, 6, B, seed, [&](const long* t) { return detail::c5_kernel(gc, t); });
    return s / (8.0 * static_cast<double>(B));
}

inline double c6_exact(const GramCache& gc, double cap = default_work_cap) {
    detail::require_all(gc, 8, "C6");
    double work = 1.0;
    for (long ni : gc.n()) work *= detail::falling(ni, 8);
    detail::check_cap(work, cap, "exact C6");
    double s = detail::sum_over_group_tuples(gc, 8, [&](const long* t) { return detail::c6_kernel(gc, t); });
    return s / (16.0 * work);
}

inline double c6_star(const GramCache& gc, long B, std::uint64_t seed) {
    detail::require_all(gc, 8, "C6*");
    detail::require_B(B);
    double s = detail::sum_over_subsamples(gc, 8, B, seed, [&](const long* t) { return detail::c6_kernel(gc, t); });
    return s / (16.0 * static_cast<double>(B));
}

// perms[j][i] is a permutation of 0..n_i-1 used for rearrangement j of group i.
inline double c7_with_permutations(const GramCache& gc, const std::vector<std::vector<std::vector<long>>>& perms,
                                   double cap = default_work_cap) {
    const long nmin = gc.n_min();
    detail::require_rows(nmin, 6, "C7");
    const long w = static_cast<long>(perms.size());
    if (w < 1) throw Error(ErrorKind::invalid_parameter, "w must be >= 1");
    const double per = detail::falling(nmin, 6);
    detail::check_cap(per * static_cast<double>(w), cap, "exact C7");
    const std::vector<long> base = detail::ordered_tuples(nmin, 6);
    const long a = gc.a();
    std::vector<long> tup(a * 6);
    KahanSum acc;
    for (long j = 0; j < w; ++j) {
        for (std::size_t t0 = 0; t0 < base.size(); t0 += 6) {
            for (long i = 0; i < a; ++i)
                for (long t = 0; t < 6; ++t) tup[i * 6 + t] = gc.offset(i) + perms[j][i][base[t0 + t]];
            acc.add(detail::c5_kernel(gc, tup.data()));
        }
    }
    return acc.value() / (8.0 * per * static_cast<double>(w));
}

namespace detail {

inline std::vector<std::vector<long>> random_permutations(const GramCache& gc, std::uint64_t seed, long j) {
    std::vector<std::vector<long>> out(gc.a());
    for (long i = 0; i < gc.a(); ++i) {
        out[i].resize(gc.n()[i]);
        std::iota(out[i].begin(), out[i].end(), 0);
        CounterRng rng = substream(seed, {0x7065726dULL, static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(i)});
        for (long t = gc.n()[i] - 1; t > 0; --t)
            std::swap(out[i][t], out[i][static_cast<long>(rng.below(static_cast<std::uint64_t>(t + 1)))]);
    }
    return out;
}

}  // namespace detail

inline double c7(const GramCache& gc, long w, std::uint64_t seed, double cap = default_work_cap) {
    if (w < 1) throw Error(ErrorKind::invalid_parameter, "w must be >= 1");
    detail::require_rows(gc.n_min(), 6, "C7");
    std::vector<std::vector<std::vector<long>>> perms;
    for (long j = 0; j < w; ++j) perms.push_back(detail::random_permutations(gc, seed, j));
    return c7_with_permutations(gc, perms, cap);
}

inline double c7_star(const GramCache& gc, long w, long B, std::uint64_t seed) {
    if (w < 1) throw Error(ErrorKind::invalid_parameter, "w must be >= 1");
    detail::require_B(B);
    const long nmin = gc.n_min();
    detail::require_rows(nmin, 6, "C7*");
    const long a = gc.a();
    std::vector<long> pool(nmin);
    std::iota(pool.begin(), pool.end(), 0);
    long sigma[6];
    std::vector<long> tup(a * 6);
    KahanSum acc;
    for (long j = 0; j < w; ++j) {
        auto perm = detail::random_permutations(gc, seed, j);
        for (long b = 0; b < B; ++b) {
            CounterRng rng = substream(seed, {static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(b)});
            detail::draw_distinct(rng, pool, 6, sigma);
            for (long i = 0; i < a; ++i)
                for (long t = 0; t < 6; ++t) tup[i * 6 + t] = gc.offset(i) + perm[i][sigma[t]];
            acc.add(detail::c5_kernel(gc, tup.data()));
        }
    }
    return acc.value() / (8.0 * static_cast<double>(w) * static_cast<double>(B));
}

inline double c5_exact(const SplitPlotSample& s, const ProjectionPair& p, double cap = default_work_cap) {
    return c5_exact(GramCache(s, p), cap);
}
inline double c5_star(const SplitPlotSample& s, const ProjectionPair& p, long B, std::uint64_t seed) {
    return c5_star(GramCache(s, p), B, seed);
}
inline double c6_exact(const SplitPlotSample& s, const ProjectionPair& p, double cap = default_work_cap) {
    return c6_exact(GramCache(s, p), cap);
}
inline double c6_star(const SplitPlotSample& s, const ProjectionPair& p, long B, std::uint64_t seed) {
    return c6_star(GramCache(s, p), B, seed);
}
inline double c7(const SplitPlotSample& s, const ProjectionPair& p, long w, std::uint64_t seed,
                 double cap = default_work_cap) {
    return c7(GramCache(s, p), w, seed, cap);
}
inline double c7_star(const SplitPlotSample& s, const ProjectionPair& p, long w, long B, std::uint64_t seed) {
    return c7_star(GramCache(s, p), w, B, seed);
}

// Efficient closed forms for the A-class estimators.
inline TraceEstimates a_suite(const GramCache& gc) {
    TraceEstimates e;
    e.a = gc.a();
    e.d = gc.d();
    e.a1 = detail::a1_all(gc);
    e.a2 = detail::a2_all(gc);
    e.a3 = detail::a3_all(gc);
    e.a4 = detail::a4_from(gc, e.a3, e.a2);
    e.meta.mode = EstimatorMode::efficient;
    return e;
}

inline TraceEstimates a_star_suite(const GramCache& gc, long B, std::uint64_t seed) {
    detail::require_all(gc, 4, "A*");
    detail::require_B(B);
    const long a = gc.a();
    std::vector<KahanSum> s1(a), s3(a);
    std::vector<KahanSum> s2(a * a);
    detail::sum_over_subsamples(gc, 4, B, seed, [&](const long* t) {
        for (long i = 0; i < a; ++i) {
            const long* p = t + 4 * i;
            s1[i].add(gc.diff(p[0], p[1], p[0], p[1]));
            double v = gc.diff(p[0], p[1], p[2], p[3]);
            s3[i].add(v * v);
            for (long r = 0; r < i; ++r) {
                const long* q = t + 4 * r;
                double u = gc.diff(p[0], p[1], q[0], q[1]);
                s2[i * a + r].add(u * u);
            }
        }
        return 0.0;
    });
    TraceEstimates e;
    e.a = a;
    e.d = gc.d();
    e.a1.resize(a);
    e.a3.resize(a);
    e.a2 = Matrix::Zero(a, a);
    const double Bd = static_cast<double>(B);
    for (long i = 0; i < a; ++i) {
        e.a1(i) = s1[i].value() / (2.0 * Bd);
        e.a3(i) = s3[i].value() / (4.0 * Bd);
        for (long r = 0; r < i; ++r) e.a2(i, r) = e.a2(r, i) = s2[i * a + r].value() / (4.0 * Bd);
    }
    e.a4 = detail::a4_from(gc, e.a3, e.a2);
    e.meta = {EstimatorMode::subsampled, B, 0, seed};
    return e;
}

inline TraceEstimates a_star_suite(const SplitPlotSample& s, const ProjectionPair& p, long B, std::uint64_t seed) {
    return a_star_suite(GramCache(s, p), B, seed);
}

struct TauF {
    double tau_p_hat;
    double f_p_hat;
};

inline TauF tau_f_hat(double c5, double a4, long a, long d) {
    if (!(a4 > 0.0)) throw Error(ErrorKind::degenerate_variance, "A4 is zero; the variance estimate vanishes");
    double tau = c5 * c5 / (a4 * a4 * a4);
    tau = std::clamp(tau, 0.0, 1.0);
    const double floor = 1.0 / static_cast<double>(a * d);
    return {tau, 1.0 / std::max(tau, floor)};
}

inline TauF tau_f_hat(const TraceEstimates& e) {
    if (!e.c5) throw Error(ErrorKind::invalid_input, "C5 estimate missing");
    return tau_f_hat(*e.c5, e.a4, e.a, e.d);
}

}  // namespace splitplot

#endif
