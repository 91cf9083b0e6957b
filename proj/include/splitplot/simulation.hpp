#ifndef SPLITPLOT_SIMULATION_HPP
#define SPLITPLOT_SIMULATION_HPP

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "test_engine.hpp"

namespace splitplot {

enum class Alternative { null, trend, shift, one_point };

inline const char* to_string(Alternative a) {
    switch (a) {
    case Alternative::null: return "null";
    case Alternative::trend: return "trend";
    case Alternative::shift: return "shift";
    case Alternative::one_point: return "one_point";
    }
    return "unknown";
}

inline Alternative parse_alternative(const std::string& s) {
    if (s == "null") return Alternative::null;
    if (s == "trend") return Alternative::trend;
    if (s == "shift") return Alternative::shift;
    if (s == "one_point") return Alternative::one_point;
    throw Error(ErrorKind::parse_error, "unknown alternative '" + s + "'");
}

enum class TestKind { phi_star, psi_z, psi_chi };
inline constexpr TestKind all_tests[] = {TestKind::phi_star, TestKind::psi_z, TestKind::psi_chi};

inline const char* to_string(TestKind t) {
    switch (t) {
    case TestKind::phi_star: return "phi_star";
    case TestKind::psi_z: return "psi_z";
    case TestKind::psi_chi: return "psi_chi";
    }
    return "unknown";
}

struct SimConfig {
    std::string name = "study";
    HypothesisSpec hypothesis{HypothesisKind::time};
    std::vector<double> ar_rho{0.6, 0.65};  // AR(1) parameter per group
    std::vector<long> n{20, 30};
    std::vector<long> d_grid{5, 10, 40, 100};
    double alpha = 0.05;
    long n_sim = 10000;
    long b_multiplier = 500;
    Alternative alternative = Alternative::null;
    std::vector<double> deltas{0.0};
    std::uint64_t seed = 1;
    DofEstimator dof = DofEstimator::c5_star;
    bool correction = true;
    double work_cap = 1e10;  // total Lambda products per study
    unsigned threads = 0;    // 0 = hardware concurrency

    void validate() const {
        if (n_sim < 1) throw Error(ErrorKind::invalid_parameter, "n_sim must be >= 1");
        if (n.size() != ar_rho.size())
            throw Error(ErrorKind::dimension_mismatch, "one AR parameter per group is required");
        if (deltas.empty()) throw Error(ErrorKind::invalid_parameter, "delta grid is empty");
        for (std::size_t k = 1; k < deltas.size(); ++k)
            if (deltas[k] < deltas[k - 1]) throw Error(ErrorKind::invalid_parameter, "delta grid must be sorted");
        if (alternative == Alternative::null && (deltas.size() != 1 || deltas[0] != 0.0))
            throw Error(ErrorKind::invalid_parameter, "a null study uses delta = 0 only");
        if (d_grid.empty()) throw Error(ErrorKind::invalid_parameter, "d grid is empty");
        for (long v : n)
            if (v < 2) throw Error(ErrorKind::insufficient_sample, "group sizes must be >= 2");
    }
};

struct SimRow {
    std::string hypothesis;
    long d = 0;
    std::vector<long> n;
    double delta = 0.0;
    TestKind test = TestKind::phi_star;
    long rejections = 0;
    long n_sim = 0;
    std::uint64_t seed = 0;
    long b_multiplier = 0;
    double wall_seconds = 0.0;

    double rate() const { return static_cast<double>(rejections) / static_cast<double>(n_sim); }
    double se() const { return std::sqrt(rate() * (1.0 - rate()) / static_cast<double>(n_sim)); }
};

struct SimResult {
    std::vector<SimRow> rows;

    const SimRow& find(long d, double delta, TestKind t) const {
        for (const auto& r : rows)
            if (r.d == d && r.delta == delta && r.test == t) return r;
        throw Error(ErrorKind::invalid_input, "no such study cell");
    }
};

// Mean of group 1 under the alternative; all other groups stay at zero.
inline Vector alternative_mean(Alternative alt, long d, double delta) {
    Vector mu = Vector::Zero(d);
    switch (alt) {
    case Alternative::null: break;
    case Alternative::trend:
        for (long t = 0; t < d; ++t) mu(t) = static_cast<double>(t + 1) * delta / static_cast<double>(d);
        break;
    case Alternative::shift: mu.setConstant(delta); break;
    case Alternative::one_point: mu(0) = delta; break;
    }
    return mu;
}

inline SplitPlotDesign study_design(const SimConfig& cfg, long d, double delta) {
    std::vector<Matrix> covs;
    for (double rho : cfg.ar_rho) covs.push_back(ar1_covariance(d, rho));
    SplitPlotDesign des = SplitPlotDesign::homogeneous_means(cfg.n, covs);
    des.means.row(0) = alternative_mean(cfg.alternative, d, delta).transpose();
    return des;
}

struct CellCounts {
    long phi = 0, z = 0, chi = 0;
};

// Runs n_sim replications of one (d, delta) cell. Data for replication r depends only on
// (seed, d, r), so all deltas share noise and any worker count gives the same counts.
inline CellCounts run_cell(const SimConfig& cfg, const ProjectionPair& pair, long d, double delta) {
    const GaussianSampler sampler(study_design(cfg, d, delta));
    const std::uint64_t data_seed = derive_key(cfg.seed, {static_cast<std::uint64_t>(d)});
    std::atomic<long> next{0};
    unsigned threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
    std::vector<CellCounts> partial(threads);
    auto worker = [&](unsigned id) {
        CellCounts c;
        TestConfig tc;
        tc.b_multiplier = cfg.b_multiplier;
        tc.correction = cfg.correction;
        tc.dof = cfg.dof;
        for (long rep = next++; rep < cfg.n_sim; rep = next++) {
            const SplitPlotSample s = sampler.draw(data_seed, static_cast<std::uint64_t>(rep));
            tc.seed = derive_key(data_seed, {static_cast<std::uint64_t>(rep), 0x5375ULL});
            const TestResult r = run_test(s, pair, cfg.alpha, tc);
            c.phi += r.reject_phi_star;
            c.z += r.reject_psi_z;
            c.chi += r.reject_psi_chi;
        }
        partial[id] = c;
    };
    if (threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker, t);
        for (auto& th : pool) th.join();
    }
    CellCounts total;
    for (const auto& c : partial) {
        total.phi += c.phi;
        total.z += c.z;
        total.chi += c.chi;
    }
    return total;
}

inline const char* study_csv_header() {
    return "hypothesis,d,n1,n2,delta,test,rejections,n_sim,rate,se,seed,b_multiplier,alternative,wall_seconds,version";
}

inline std::string format_real(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string study_csv_line(const SimRow& r, Alternative alt) {
    std::ostringstream os;
    os << r.hypothesis << ',' << r.d << ',' << (r.n.size() > 0 ? r.n[0] : 0) << ','
       << (r.n.size() > 1 ? r.n[1] : 0) << ',' << format_real(r.delta) << ',' << to_string(r.test) << ','
       << r.rejections << ',' << r.n_sim << ',' << format_real(r.rate()) << ',' << format_real(r.se()) << ','
       << r.seed << ',' << r.b_multiplier << ',' << to_string(alt) << ',' << r.wall_seconds << ',' << version;
    return os.str();
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

inline TestKind parse_test_kind(const std::string& s) {
    if (s == "phi_star") return TestKind::phi_star;
    if (s == "psi_z") return TestKind::psi_z;
    if (s == "psi_chi") return TestKind::psi_chi;
    throw Error(ErrorKind::parse_error, "unknown test '" + s + "'");
}

// Rows of an existing checkpoint file that belong to this configuration.
inline std::vector<SimRow> load_checkpoint(const std::string& path, const SimConfig& cfg) {
    std::vector<SimRow> rows;
    std::ifstream in(path);
    if (!in) return rows;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto c = split_csv(line);
        if (c.size() < 13) continue;
        SimRow r;
        r.hypothesis = c[0];
        r.d = std::stol(c[1]);
        r.n = {std::stol(c[2]), std::stol(c[3])};
        r.delta = std::stod(c[4]);
        r.test = parse_test_kind(c[5]);
        r.rejections = std::stol(c[6]);
        r.n_sim = std::stol(c[7]);
        r.seed = std::stoull(c[10]);
        r.b_multiplier = std::stol(c[11]);
        r.wall_seconds = std::stod(c[13]);
        if (r.hypothesis == cfg.hypothesis.name() && r.n_sim == cfg.n_sim && r.seed == cfg.seed &&
            r.b_multiplier == cfg.b_multiplier && c[12] == to_string(cfg.alternative))
            rows.push_back(r);
    }
    return rows;
}

}  // namespace detail

// Runs every (d, delta) cell. With a checkpoint path, finished cells found in the file are
// reused and each new cell is appended as soon as it completes.
inline SimResult run_study(const SimConfig& cfg, const std::string& checkpoint = "",
                           const std::function<void(const SimRow&)>& on_row = nullptr) {
    cfg.validate();
    double products = 0.0;
    long N = 0;
    for (long v : cfg.n) N += v;
    products = 3.0 * static_cast<double>(cfg.n_sim) * static_cast<double>(cfg.b_multiplier * N) *
               static_cast<double>(cfg.d_grid.size() * cfg.deltas.size());
    if (products > cfg.work_cap)
        throw Error(ErrorKind::work_cap_exceeded, "study needs " + format_real(products) +
                                                      " Lambda products, above the cap " + format_real(cfg.work_cap));
    SimResult res;
    std::vector<SimRow> done = checkpoint.empty() ? std::vector<SimRow>{} : detail::load_checkpoint(checkpoint, cfg);
    std::ofstream out;
    if (!checkpoint.empty()) {
        bool fresh = !std::ifstream(checkpoint).good();
        out.open(checkpoint, std::ios::app);
        if (!out) throw Error(ErrorKind::invalid_input, "cannot open " + checkpoint);
        if (fresh) out << study_csv_header() << '\n';
    }
    for (long d : cfg.d_grid) {
        const long a = static_cast<long>(cfg.n.size());
        const ProjectionPair pair = standard_hypothesis(cfg.hypothesis, a, SubplotStructure::plain(d));
        for (double delta : cfg.deltas) {
            std::vector<SimRow> cell;
            for (TestKind t : all_tests)
                for (const auto& r : done)
                    if (r.d == d && r.delta == delta && r.test == t) {
                        cell.push_back(r);
                        break;
                    }
            if (cell.size() != 3) {
                cell.clear();
                auto t0 = std::chrono::steady_clock::now();
                CellCounts c = run_cell(cfg, pair, d, delta);
                double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                for (TestKind t : all_tests) {
                    SimRow r;
                    r.hypothesis = cfg.hypothesis.name();
                    r.d = d;
                    r.n = cfg.n;
                    r.delta = delta;
                    r.test = t;
                    r.rejections = t == TestKind::phi_star ? c.phi : t == TestKind::psi_z ? c.z : c.chi;
                    r.n_sim = cfg.n_sim;
                    r.seed = cfg.seed;
                    r.b_multiplier = cfg.b_multiplier;
                    r.wall_seconds = secs;
                    cell.push_back(r);
                    if (out.is_open()) out << study_csv_line(r, cfg.alternative) << '\n';
                }
                if (out.is_open()) out.flush();
            }
            for (auto& r : cell) {
                if (on_row) on_row(r);
                res.rows.push_back(r);
            }
        }
    }
    return res;
}

inline SimResult type_one_error_study(SimConfig cfg, const std::string& checkpoint = "") {
    if (cfg.alternative != Alternative::null)
        throw Error(ErrorKind::invalid_parameter, "type-I error studies use the null configuration");
    cfg.deltas = {0.0};
    return run_study(cfg, checkpoint);
}

inline SimResult power_study(const SimConfig& cfg, const std::string& checkpoint = "") {
    bool has_zero = false;
    for (double v : cfg.deltas) has_zero = has_zero || v == 0.0;
    if (!has_zero) throw Error(ErrorKind::invalid_parameter, "the delta grid of a power study must include 0");
    return run_study(cfg, checkpoint);
}

// Named configurations of the published simulation designs.
// figN-dD: fig1 group null, fig2 time null, fig3a group trend, fig3b time trend,
// fig4a group shift, fig4b time one-point.
inline SimConfig preset(const std::string& name) {
    auto dpos = name.find("-d");
    if (dpos == std::string::npos) throw Error(ErrorKind::parse_error, "preset '" + name + "' lacks -d<dim>");
    const std::string fig = name.substr(0, dpos);
    long d = 0;
    try {
        d = std::stol(name.substr(dpos + 2));
    } catch (const std::exception&) {
        throw Error(ErrorKind::parse_error, "preset '" + name + "' has a bad dimension");
    }
    SimConfig c;
    c.name = name;
    c.d_grid = {d};
    std::vector<double> grid;
    for (int k = 0; k <= 12; ++k) grid.push_back(0.25 * k);
    if (fig == "fig1") {
        c.hypothesis = {HypothesisKind::group};
    } else if (fig == "fig2") {
        c.hypothesis = {HypothesisKind::time};
    } else if (fig == "fig3a" || fig == "fig3b" || fig == "fig4a" || fig == "fig4b") {
        c.hypothesis = {fig.back() == 'a' ? HypothesisKind::group : HypothesisKind::time};
        c.alternative = fig.substr(0, 4) == "fig3" ? Alternative::trend
                        : fig == "fig4a"           ? Alternative::shift
                                                   : Alternative::one_point;
        c.deltas = grid;
        c.n_sim = 2000;
    } else {
        throw Error(ErrorKind::parse_error, "unknown preset '" + name + "'");
    }
    return c;
}

struct OverlapReport {
    double empirical = 0.0;
    double se = 0.0;
    double formula = 0.0;
    long reps = 0;
};

inline double binomial(long n, long k) {
    if (k < 0 || k > n) return 0.0;
    double v = 1.0;
    for (long t = 1; t <= k; ++t) v = v * static_cast<double>(n - k + t) / static_cast<double>(t);
    return v;
}

inline double overlap_formula(const std::vector<long>& n, long m, long B) {
    double prod = 1.0;
    for (long ni : n) prod *= binomial(ni - m, m) / binomial(ni, m);
    return 1.0 - (1.0 - 1.0 / static_cast<double>(B)) * prod;
}

// Fraction of ordered subsample pairs (k, l) in B x B that share an index in some group.
inline OverlapReport subsample_overlap_study(const std::vector<long>& n, long m, long B, long reps,
                                             std::uint64_t seed) {
    if (m < 1) throw Error(ErrorKind::invalid_parameter, "m must be >= 1");
    for (long ni : n)
        if (m > ni) throw Error(ErrorKind::invalid_parameter, "m exceeds a group size");
    if (B < 1 || reps < 2) throw Error(ErrorKind::invalid_parameter, "B >= 1 and reps >= 2 required");
    const long a = static_cast<long>(n.size());
    std::vector<std::vector<long>> pools(a);
    for (long i = 0; i < a; ++i) {
        pools[i].resize(n[i]);
        std::iota(pools[i].begin(), pools[i].end(), 0);
    }
    std::vector<std::vector<std::vector<char>>> member(B, std::vector<std::vector<char>>(a));
    std::vector<long> draw(m);
    double sum = 0.0, sumsq = 0.0;
    for (long rep = 0; rep < reps; ++rep) {
        for (long b = 0; b < B; ++b) {
            CounterRng rng = substream(seed, {static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(b)});
            for (long i = 0; i < a; ++i) {
                detail::draw_distinct(rng, pools[i], m, draw.data());
                member[b][i].assign(n[i], 0);
                for (long v : draw) member[b][i][v] = 1;
            }
        }
        long overlapping = 0;
        for (long k = 0; k < B; ++k)
            for (long l = 0; l < B; ++l) {
                bool disjoint = k != l;
                for (long i = 0; i < a && disjoint; ++i)
                    for (long v = 0; v < n[i]; ++v)
                        if (member[k][i][v] && member[l][i][v]) {
                            disjoint = false;
                            break;
                        }
                overlapping += !disjoint;
            }
        const double frac = static_cast<double>(overlapping) / static_cast<double>(B * B);
        sum += frac;
        sumsq += frac * frac;
    }
    OverlapReport rep;
    rep.reps = reps;
    rep.empirical = sum / static_cast<double>(reps);
    const double var = (sumsq - static_cast<double>(reps) * rep.empirical * rep.empirical) / static_cast<double>(reps - 1);
    rep.se = std::sqrt(std::max(var, 0.0) / static_cast<double>(reps));
    rep.formula = overlap_formula(n, m, B);
    return rep;
}

}  // namespace splitplot

#endif
