#pragma once

#include <string>
#include <vector>

namespace loclab {

struct SampleSet {
    std::string label;
    std::vector<double> values;
};

struct StatsSummary {
    int n = 0;
    double mean = 0.0;
    double sd = 0.0;          // sample standard deviation (n - 1)
    double cv_percent = 0.0;  // 100 * sd / mean
    double ci_low = 0.0;      // mean +- t_{0.975, n-1} * sd / sqrt(n)
    double ci_high = 0.0;
};

StatsSummary summarize(const SampleSet& s);

struct PairedTResult {
    int n = 0;
    double mean_diff = 0.0;  // mean of (b - a)
    double sd_diff = 0.0;
    double t = 0.0;
    double df = 0.0;
    double p = 0.0;          // two-sided
    double cohens_d = 0.0;   // mean_diff / sd_diff
};

// Paired two-sided t test on matched samples; a and b must be equal-length
// runs of the same seeds. Identical samples make the test degenerate.
PairedTResult paired_t(const SampleSet& a, const SampleSet& b);

struct AnovaResult {
    int groups = 0;
    int total_n = 0;
    double df_between = 0.0;
    double df_within = 0.0;
    double ms_between = 0.0;
    double ms_within = 0.0;
    double f = 0.0;
    double p = 0.0;
};

AnovaResult one_way_anova(const std::vector<SampleSet>& groups);

// Family-wise correction: p -> min(1, m * p) for m comparisons.
std::vector<double> bonferroni(const std::vector<double>& pvals);

// Shared distribution machinery (regularized incomplete beta via a Lentz
// continued fraction), exposed so tests can pin it against quadrature.
double log_gamma(double x);
double reg_inc_beta(double a, double b, double x);
double student_t_two_sided_p(double t, double df);
double student_t_cdf(double t, double df);
double student_t_quantile(double q, double df);  // q in (0, 1), bisection on the CDF
double f_dist_sf(double f, double df1, double df2);

} // namespace loclab
