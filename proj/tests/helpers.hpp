#ifndef SPLITPLOT_TESTS_HELPERS_HPP
#define SPLITPLOT_TESTS_HELPERS_HPP

#include <cmath>
#include <random>
#include <vector>

#include <splitplot/splitplot.hpp>

namespace testutil {

using splitplot::Matrix;
using splitplot::Vector;

inline Matrix random_matrix(long r, long c, std::mt19937_64& g) {
    std::normal_distribution<double> nd;
    Matrix M(r, c);
    for (long i = 0; i < r; ++i)
        for (long j = 0; j < c; ++j) M(i, j) = nd(g);
    return M;
}

inline Matrix random_spd(long d, std::mt19937_64& g) {
    Matrix L = random_matrix(d, d, g);
    return L * L.transpose() / static_cast<double>(d) + 0.2 * Matrix::Identity(d, d);
}

inline splitplot::SplitPlotSample random_sample(const std::vector<long>& n, long d, std::mt19937_64& g) {
    splitplot::SplitPlotSample s;
    for (long ni : n) s.groups.push_back(random_matrix(ni, d, g));
    return s;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({1e-300, std::abs(a), std::abs(b)}); }

// Running mean and standard error.
struct MeanSE {
    double sum = 0.0, sumsq = 0.0;
    long n = 0;
    void add(double x) {
        sum += x;
        sumsq += x * x;
        ++n;
    }
    double mean() const { return sum / n; }
    double se() const {
        double m = mean();
        return std::sqrt(std::max(0.0, (sumsq / n - m * m)) * n / (n - 1.0) / n);
    }
};

// Stacked Z vector for one tuple: block i is sqrt(N/n_i) (x_{i,p} - x_{i,q}).
inline Vector stacked_z(const splitplot::SplitPlotSample& s, const std::vector<std::pair<long, long>>& pairs) {
    const long d = s.d();
    const double N = static_cast<double>(s.total());
    Vector z(s.a() * d);
    for (long i = 0; i < s.a(); ++i)
        z.segment(i * d, d) = std::sqrt(N / s.groups[i].rows()) *
                              (s.groups[i].row(pairs[i].first) - s.groups[i].row(pairs[i].second)).transpose();
    return z;
}

// Independent oracle for C5 with a single group: explicit Z vectors, materialized T,
// all ordered 6-tuples.
inline double brute_c5_single_group(const splitplot::SplitPlotSample& s, const Matrix& T) {
    const long n = s.groups[0].rows();
    double acc = 0.0;
    long count = 0;
    std::vector<long> idx(6);
    for (idx[0] = 0; idx[0] < n; ++idx[0])
        for (idx[1] = 0; idx[1] < n; ++idx[1])
            for (idx[2] = 0; idx[2] < n; ++idx[2])
                for (idx[3] = 0; idx[3] < n; ++idx[3])
                    for (idx[4] = 0; idx[4] < n; ++idx[4])
                        for (idx[5] = 0; idx[5] < n; ++idx[5]) {
                            bool distinct = true;
                            for (int p = 0; p < 6 && distinct; ++p)
                                for (int q = p + 1; q < 6; ++q)
                                    if (idx[p] == idx[q]) distinct = false;
                            if (!distinct) continue;
                            Vector z1 = stacked_z(s, {{idx[0], idx[1]}});
                            Vector z2 = stacked_z(s, {{idx[2], idx[3]}});
                            Vector z3 = stacked_z(s, {{idx[4], idx[5]}});
                            acc += z1.dot(T * z2) * z2.dot(T * z3) * z3.dot(T * z1);
                            ++count;
                        }
    return acc / (8.0 * count);
}

}  // namespace testutil

#endif
