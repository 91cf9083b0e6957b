// Generates a two-group sample with a 4x6 sub-plot layout and runs all standard hypotheses.
#include <cstdio>

#include <splitplot/splitplot.hpp>

using namespace splitplot;

int main() {
    const SubplotStructure st{4, 6};
    std::vector<Matrix> covs{ar1_covariance(st.d(), 0.6), ar1_covariance(st.d(), 0.65)};
    SplitPlotDesign des = SplitPlotDesign::homogeneous_means({10, 10}, covs);
    des.means.row(0).head(6).setConstant(1.0);
    const SplitPlotSample s = sample(des, 2024);

    TestConfig cfg;
    cfg.seed = 7;
    std::printf("%-28s %10s %8s %10s %s\n", "hypothesis", "W", "f_hat", "p", "phi*");
    for (const auto& h : all_standard_hypotheses(st)) {
        const TestResult r = run_test(s, standard_hypothesis(h, 2, st), 0.05, cfg);
        std::printf("%-28s %10.4f %8.2f %10.4g %s\n", h.name().c_str(), r.w, r.f_hat, r.p_value,
                    r.reject_phi_star ? "reject" : "-");
    }
}
