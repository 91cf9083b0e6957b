#include <splitplot/cli.hpp>

#include <CLI11.hpp>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <splitplot/io.hpp>
#include <splitplot/oracle.hpp>
#include <splitplot/simulation.hpp>

namespace splitplot {

namespace detail {

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!trim(item).empty()) out.push_back(trim(item));
    return out;
}

inline std::vector<long> parse_longs(const std::string& s) {
    std::vector<long> out;
    for (const auto& t : split_list(s)) {
        try {
            out.push_back(std::stol(t));
        } catch (const std::exception&) {
            throw Error(ErrorKind::parse_error, "'" + t + "' is not an integer");
        }
    }
    return out;
}

inline std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    for (const auto& t : split_list(s)) {
        double v;
        if (!parse_double(t, v)) throw Error(ErrorKind::parse_error, "'" + t + "' is not a number");
        out.push_back(v);
    }
    return out;
}

// Covariance spec per group: ar:<rho>, identity, or file:<path>.
inline std::vector<Matrix> parse_covariances(const std::string& spec, long a, long d) {
    auto parts = split_list(spec);
    if (parts.size() == 1 && a > 1) parts.assign(a, parts[0]);
    if (static_cast<long>(parts.size()) != a)
        throw Error(ErrorKind::dimension_mismatch, "need one covariance per group");
    std::vector<Matrix> out;
    for (const auto& p : parts) {
        if (p.rfind("ar:", 0) == 0) {
            double rho;
            if (!parse_double(p.substr(3), rho)) throw Error(ErrorKind::parse_error, "bad AR parameter in " + p);
            out.push_back(ar1_covariance(d, rho));
        } else if (p == "identity") {
            out.push_back(Matrix::Identity(d, d));
        } else if (p.rfind("file:", 0) == 0) {
            Matrix S = read_matrix_csv(p.substr(5));
            if (S.rows() != d || S.cols() != d)
                throw Error(ErrorKind::dimension_mismatch, p + " is not " + std::to_string(d) + "x" + std::to_string(d));
            out.push_back(S);
        } else {
            throw Error(ErrorKind::parse_error, "unknown covariance '" + p + "'");
        }
    }
    return out;
}

inline std::uint64_t resolve_seed(const std::string& text, std::ostream& err) {
    if (!text.empty()) {
        try {
            return std::stoull(text);
        } catch (const std::exception&) {
            throw Error(ErrorKind::parse_error, "seed '" + text + "' is not an unsigned integer");
        }
    }
    std::random_device rd;
    std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    err << "seed: " << s << " (auto-generated)\n";
    return s;
}

inline DofEstimator parse_dof(const std::string& s) {
    if (s == "c5_star") return DofEstimator::c5_star;
    if (s == "c5_exact") return DofEstimator::c5_exact;
    if (s == "c7_star") return DofEstimator::c7_star;
    throw Error(ErrorKind::parse_error, "unknown estimator '" + s + "'");
}

struct UsageFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Errors raised while interpreting command-line values are usage errors, not data errors.
template <class F>
auto as_usage(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        throw UsageFailure(e.what());
    }
}

class OutputSink {
public:
    OutputSink(const std::string& path, std::ostream& fallback) : out_(&fallback) {
        if (!path.empty()) {
            file_.open(path);
            if (!file_) throw Error(ErrorKind::invalid_input, "cannot write " + path);
            out_ = &file_;
        }
    }
    std::ostream& stream() { return *out_; }

private:
    std::ofstream file_;
    std::ostream* out_;
};

}  // namespace detail

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Studentized quadratic-form tests for high-dimensional split-plot designs", "splitplot"};
    app.set_config("--config", "", "INI/TOML file with option values ([test], [simulate], ... sections)");
    app.set_version_flag("--version", version);
    app.require_subcommand(1);

    // test
    auto* test = app.add_subcommand("test", "Run the tests on a sample CSV");
    std::string data_path, hyp = "group", subplot, tw_path, ts_path, out_path, fmt = "csv", estimator = "c5_star",
                seed_text;
    double alpha = 0.05;
    long B = 0, b_mult = 50000, w = 1;
    bool no_correction = false, subsampled = false;
    test->add_option("--data", data_path, "Sample CSV (group,y1,...,yd)")->required();
    test->add_option("--hypothesis", hyp,
                     "group|time|interaction|time_within:L|between_interventions:L:K|all (all uses --subplot)");
    test->add_option("--subplot", subplot, "Sub-plot layout LxS (levels x times); default plain d");
    test->add_option("--tw", tw_path, "Raw whole-plot hypothesis matrix CSV (with --ts)");
    test->add_option("--ts", ts_path, "Raw sub-plot hypothesis matrix CSV (with --tw)");
    test->add_option("--alpha", alpha, "Level")->check(CLI::Range(0.0, 1.0));
    test->add_option("--B", B, "Subsample draws (0 = b-multiplier * N)");
    test->add_option("--b-multiplier", b_mult, "B per subject when --B is 0");
    test->add_option("--w", w, "Permutations for c7_star");
    test->add_option("--estimator", estimator, "c5_star|c5_exact|c7_star");
    test->add_flag("--no-correction", no_correction, "Drop the sqrt(N/(N-1)) factor");
    test->add_flag("--subsampled-traces", subsampled, "Subsampled A-class estimators");
    test->add_option("--seed", seed_text, "Seed for subsampling (auto-generated and logged if absent)");
    test->add_option("--out", out_path, "Output file (stdout if absent)");
    test->add_option("--format", fmt, "csv|json")->check(CLI::IsMember({"csv", "json"}));

    // simulate
    auto* sim = app.add_subcommand("simulate", "Type-I error or power study");
    std::string preset_name, sim_hyp, sim_n, sim_rho, sim_d, sim_alt, sim_deltas, sim_out, sim_seed;
    long n_sim = 0, sim_bmult = 0;
    double sim_alpha = 0.0, work_cap = 0.0;
    unsigned threads = 0;
    sim->add_option("--preset", preset_name, "fig1-dD|fig2-dD|fig3a-dD|fig3b-dD|fig4a-dD|fig4b-dD");
    sim->add_option("--hypothesis", sim_hyp, "group|time|interaction");
    sim->add_option("--n", sim_n, "Group sizes, e.g. 20,30");
    sim->add_option("--rho", sim_rho, "AR(1) parameter per group, e.g. 0.6,0.65");
    sim->add_option("--d-grid", sim_d, "Dimensions, e.g. 5,10,40,100");
    sim->add_option("--alternative", sim_alt, "null|trend|shift|one_point");
    sim->add_option("--deltas", sim_deltas, "Sorted effect sizes including 0");
    sim->add_option("--alpha", sim_alpha, "Level");
    sim->add_option("--n-sim", n_sim, "Replications per cell");
    sim->add_option("--b-multiplier", sim_bmult, "B = multiplier * N");
    sim->add_option("--seed", sim_seed, "Study seed");
    sim->add_option("--threads", threads, "Worker threads (0 = all cores)");
    sim->add_option("--work-cap", work_cap, "Cap on total Lambda products");
    sim->add_option("--out", sim_out, "Append-only study CSV; finished cells are reused on rerun");

    // oracle
    auto* orc = app.add_subcommand("oracle", "Exact traces, moments, tau_P and asymptotic levels");
    std::string o_hyp = "time", o_n, o_cov = "identity", o_sub, o_quantity = "all", o_out;
    long o_a = 2, o_d = 0;
    double o_alpha = 0.05;
    orc->add_option("--hypothesis", o_hyp, "Standard hypothesis name");
    orc->add_option("--a", o_a, "Groups");
    orc->add_option("--d", o_d, "Dimension");
    orc->add_option("--subplot", o_sub, "Sub-plot layout LxS (overrides --d)");
    orc->add_option("--n", o_n, "Group sizes")->required();
    orc->add_option("--cov", o_cov, "Per-group covariance: ar:<rho>|identity|file:<csv>");
    orc->add_option("--quantity", o_quantity, "tau_p|tau_cq|t1|t2|t3|t4|mean|var|spectrum|table1|all");
    orc->add_option("--alpha", o_alpha, "Level for table1");
    orc->add_option("--out", o_out, "Output CSV (stdout if absent)");

    // gen
    auto* gen = app.add_subcommand("gen", "Write a synthetic Gaussian sample CSV");
    std::string g_n, g_cov = "identity", g_sub, g_alt = "null", g_out, g_seed;
    long g_d = 0;
    double g_delta = 0.0;
    gen->add_option("--n", g_n, "Group sizes")->required();
    gen->add_option("--d", g_d, "Dimension");
    gen->add_option("--subplot", g_sub, "Sub-plot layout LxS (overrides --d)");
    gen->add_option("--cov", g_cov, "Per-group covariance: ar:<rho>|identity|file:<csv>");
    gen->add_option("--alternative", g_alt, "Mean of group 1: null|trend|shift|one_point");
    gen->add_option("--delta", g_delta, "Effect size");
    gen->add_option("--seed", g_seed, "Seed");
    gen->add_option("--out", g_out, "Output CSV (stdout if absent); a .meta.json sidecar is written next to it");

    // overlap
    auto* ov = app.add_subcommand("overlap", "Empirical vs. expected fraction of overlapping subsample pairs");
    std::string ov_n, ov_seed;
    long ov_m = 2, ov_B = 10, ov_reps = 10000;
    ov->add_option("--n", ov_n, "Group sizes")->required();
    ov->add_option("--m", ov_m, "Subsample length");
    ov->add_option("--B", ov_B, "Subsamples per replication");
    ov->add_option("--reps", ov_reps, "Replications");
    ov->add_option("--seed", ov_seed, "Seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 1;
    }

    try {
        if (test->parsed()) {
            std::vector<std::string> warnings;
            const SplitPlotSample s = read_sample_csv(data_path, &warnings);
            for (const auto& wmsg : warnings) err << "warning: " << wmsg << '\n';
            TestConfig cfg;
            cfg.B = B;
            cfg.b_multiplier = b_mult;
            cfg.w = w;
            cfg.correction = !no_correction;
            cfg.dof = detail::as_usage([&] { return detail::parse_dof(estimator); });
            cfg.subsampled_traces = subsampled;
            cfg.seed = detail::as_usage([&] { return detail::resolve_seed(seed_text, err); });
            SubplotStructure st = subplot.empty() ? SubplotStructure::plain(s.d())
                                                   : detail::as_usage([&] { return SubplotStructure::parse(subplot); });
            if (st.d() != s.d())
                throw Error(ErrorKind::dimension_mismatch, "sub-plot layout has d = " + std::to_string(st.d()) +
                                                               " but the data has d = " + std::to_string(s.d()));
            std::vector<std::pair<std::string, ProjectionPair>> hyps;
            if (!tw_path.empty() || !ts_path.empty()) {
                if (tw_path.empty() || ts_path.empty()) {
                    err << "--tw and --ts must be given together\n";
                    return 1;
                }
                hyps.emplace_back("custom", kron_pair_projector(read_matrix_csv(tw_path), read_matrix_csv(ts_path)));
            } else if (hyp == "all") {
                for (const auto& h : all_standard_hypotheses(st))
                    hyps.emplace_back(h.name(), standard_hypothesis(h, s.a(), st));
            } else {
                HypothesisSpec h = detail::as_usage([&] { return HypothesisSpec::parse(hyp); });
                hyps.emplace_back(h.name(), standard_hypothesis(h, s.a(), st));
            }
            std::vector<TestResult> results;
            for (const auto& [name, pair] : hyps) {
                TestResult r = run_test(s, pair, alpha, cfg);
                r.hypothesis = name;
                if (!r.warning.empty()) err << "warning (" << name << "): " << r.warning << '\n';
                results.push_back(r);
            }
            detail::OutputSink sink(out_path, out);
            if (fmt == "json") {
                nlohmann::json j = nlohmann::json::array();
                for (const auto& r : results) j.push_back(to_json(r));
                sink.stream() << (results.size() == 1 ? j[0] : j).dump(2) << '\n';
            } else {
                sink.stream() << test_result_csv_header() << '\n';
                for (const auto& r : results) sink.stream() << test_result_csv_row(r) << '\n';
            }
            return 0;
        }

        if (sim->parsed()) {
            SimConfig cfg = detail::as_usage([&] {
                SimConfig c = preset_name.empty() ? SimConfig{} : preset(preset_name);
                if (!sim_hyp.empty()) c.hypothesis = HypothesisSpec::parse(sim_hyp);
                if (!sim_n.empty()) c.n = detail::parse_longs(sim_n);
                if (!sim_rho.empty()) c.ar_rho = detail::parse_doubles(sim_rho);
                if (!sim_d.empty()) c.d_grid = detail::parse_longs(sim_d);
                if (!sim_alt.empty()) c.alternative = parse_alternative(sim_alt);
                if (!sim_deltas.empty()) c.deltas = detail::parse_doubles(sim_deltas);
                else if (!sim_alt.empty() && c.alternative == Alternative::null) c.deltas = {0.0};
                if (sim_alpha > 0.0) c.alpha = sim_alpha;
                if (n_sim > 0) c.n_sim = n_sim;
                if (sim_bmult > 0) c.b_multiplier = sim_bmult;
                if (work_cap > 0.0) c.work_cap = work_cap;
                c.threads = threads;
                c.seed = detail::resolve_seed(sim_seed, err);
                c.validate();
                return c;
            });
            out << study_csv_header() << '\n';
            run_study(cfg, sim_out, [&](const SimRow& r) { out << study_csv_line(r, cfg.alternative) << '\n'; });
            return 0;
        }

        if (orc->parsed()) {
            const std::vector<long> n = detail::as_usage([&] { return detail::parse_longs(o_n); });
            if (static_cast<long>(n.size()) != o_a)
                throw Error(ErrorKind::dimension_mismatch, "--n must list " + std::to_string(o_a) + " group sizes");
            std::vector<OracleRow> rows;
            auto want = [&](const char* q) { return o_quantity == "all" || o_quantity == q; };
            if (want("table1")) {
                rows.push_back({"psi_z_beta1_to_1", asymptotic_level(FixedTest::psi_z, o_alpha, LimitRegime::beta1_to_1),
                                "closed-form"});
                rows.push_back({"psi_chi_beta1_to_0",
                                asymptotic_level(FixedTest::psi_chi, o_alpha, LimitRegime::beta1_to_0), "closed-form"});
            }
            if (o_quantity != "table1") {
                SubplotStructure st = o_sub.empty() ? SubplotStructure::plain(o_d) : SubplotStructure::parse(o_sub);
                if (st.d() < 1) {
                    err << "oracle needs --d or --subplot\n";
                    return 1;
                }
                SplitPlotDesign des =
                    SplitPlotDesign::homogeneous_means(n, detail::parse_covariances(o_cov, o_a, st.d()));
                const ProjectionPair pair = standard_hypothesis(HypothesisSpec::parse(o_hyp), o_a, st);
                const TracePowers tp = trace_powers(pair, des);
                if (want("t1")) rows.push_back({"t1", tp.t1, "exact-trace"});
                if (want("t2")) rows.push_back({"t2", tp.t2, "exact-trace"});
                if (want("t3")) rows.push_back({"t3", tp.t3, "exact-trace"});
                if (want("t4")) rows.push_back({"t4", tp.t4, "exact-trace"});
                if (want("mean")) rows.push_back({"mean_q", exact_moments(pair, des).mean_q, "blockwise"});
                if (want("var")) rows.push_back({"var_q", exact_moments(pair, des).var_q, "blockwise"});
                if (want("tau_p")) rows.push_back({"tau_p", tp.tau_p(), "exact-trace"});
                if (want("tau_cq")) rows.push_back({"tau_cq", tp.tau_cq(), "exact-trace"});
                if (want("spectrum")) {
                    const EigenSpectrum sp = eigen_spectrum(pair, des);
                    for (std::size_t k = 0; k < sp.lambdas.size(); ++k)
                        if (sp.lambdas[k] > 0.0)
                            rows.push_back({"lambda_" + std::to_string(k + 1), sp.lambdas[k], "eigen"});
                }
            }
            if (rows.empty()) {
                err << "unknown quantity '" << o_quantity << "'\n";
                return 1;
            }
            detail::OutputSink sink(o_out, out);
            write_oracle_csv(sink.stream(), rows);
            return 0;
        }

        if (gen->parsed()) {
            const std::vector<long> n = detail::as_usage([&] { return detail::parse_longs(g_n); });
            SubplotStructure st = g_sub.empty() ? SubplotStructure::plain(g_d) : SubplotStructure::parse(g_sub);
            if (st.d() < 1) {
                err << "gen needs --d or --subplot\n";
                return 1;
            }
            const long a = static_cast<long>(n.size());
            SplitPlotDesign des = SplitPlotDesign::homogeneous_means(n, detail::parse_covariances(g_cov, a, st.d()));
            const Alternative alt = parse_alternative(g_alt);
            des.means.row(0) = alternative_mean(alt, st.d(), g_delta).transpose();
            const std::uint64_t seed = detail::resolve_seed(g_seed, err);
            const SplitPlotSample s = sample(des, seed);
            if (g_out.empty()) {
                write_sample_csv(out, s);
            } else {
                write_sample_csv(g_out, s);
                nlohmann::json meta{{"seed", seed},       {"B", 0},           {"version", version},
                                    {"n", n},             {"d", st.d()},      {"cov", g_cov},
                                    {"alternative", g_alt}, {"delta", g_delta}};
                std::ofstream(g_out + ".meta.json") << meta.dump(2) << '\n';
            }
            return 0;
        }

        if (ov->parsed()) {
            const std::uint64_t seed = detail::resolve_seed(ov_seed, err);
            const OverlapReport r = subsample_overlap_study(detail::parse_longs(ov_n), ov_m, ov_B, ov_reps, seed);
            out << "empirical,se,formula,reps,seed,B,version\n"
                << std::setprecision(10) << r.empirical << ',' << r.se << ',' << r.formula << ',' << r.reps << ','
                << seed << ',' << ov_B << ',' << version << '\n';
            return 0;
        }
    } catch (const detail::UsageFailure& e) {
        err << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

}  // namespace splitplot

