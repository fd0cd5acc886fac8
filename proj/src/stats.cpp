#include "loclab/stats.hpp"

#include <algorithm>
#include <cmath>

#include "loclab/error.hpp"

namespace loclab {

double log_gamma(double x) { return std::lgamma(x); }

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kFpMin = 1e-300;

    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

} // namespace

double reg_inc_beta(double a, double b, double x) {
    if (a <= 0.0 || b <= 0.0) fail(errc::invalid_samples, "beta parameters must be positive");
    if (x < 0.0 || x > 1.0) fail(errc::invalid_samples, "x outside [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    double ln_front = log_gamma(a + b) - log_gamma(a) - log_gamma(b) + a * std::log(x) +
                      b * std::log(1.0 - x);
    double front = std::exp(ln_front);
    // The continued fraction converges fast for x < (a+1)/(a+b+2); use the
    // symmetry I_x(a,b) = 1 - I_{1-x}(b,a) on the other side.
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
    if (df <= 0.0) fail(errc::invalid_samples, "degrees of freedom must be positive");
    double t2 = t * t;
    return reg_inc_beta(0.5 * df, 0.5, df / (df + t2));
}

double student_t_cdf(double t, double df) {
    double half_p = 0.5 * student_t_two_sided_p(t, df);
    return t >= 0.0 ? 1.0 - half_p : half_p;
}

double student_t_quantile(double q, double df) {
    if (q <= 0.0 || q >= 1.0) fail(errc::invalid_samples, "quantile level outside (0, 1)");
    if (df <= 0.0) fail(errc::invalid_samples, "degrees of freedom must be positive");
    double lo = -1e8, hi = 1e8;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (student_t_cdf(mid, df) < q)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

double f_dist_sf(double f, double df1, double df2) {
    if (df1 <= 0.0 || df2 <= 0.0) fail(errc::invalid_samples, "degrees of freedom must be positive");
    if (f <= 0.0) return 1.0;
    return reg_inc_beta(0.5 * df2, 0.5 * df1, df2 / (df2 + df1 * f));
}

StatsSummary summarize(const SampleSet& s) {
    int n = static_cast<int>(s.values.size());
    if (n < 2) fail(errc::invalid_samples, "need at least two values, got " + std::to_string(n));
    StatsSummary out;
    out.n = n;
    double sum = 0.0;
    for (double v : s.values) sum += v;
    out.mean = sum / n;
    double ss = 0.0;
    for (double v : s.values) ss += (v - out.mean) * (v - out.mean);
    out.sd = std::sqrt(ss / (n - 1));
    if (out.mean == 0.0) fail(errc::invalid_samples, "coefficient of variation undefined at mean 0");
    out.cv_percent = 100.0 * out.sd / out.mean;
    double tq = student_t_quantile(0.975, n - 1);
    double half = tq * out.sd / std::sqrt(static_cast<double>(n));
    out.ci_low = out.mean - half;
    out.ci_high = out.mean + half;
    return out;
}

PairedTResult paired_t(const SampleSet& a, const SampleSet& b) {
    if (a.values.size() != b.values.size())
        fail(errc::invalid_samples, "paired samples must have equal length");
    int n = static_cast<int>(a.values.size());
    if (n < 2) fail(errc::invalid_samples, "need at least two pairs");
    PairedTResult r;
    r.n = n;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += b.values[i] - a.values[i];
    r.mean_diff = sum / n;
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
        double d = b.values[i] - a.values[i] - r.mean_diff;
        ss += d * d;
    }
    r.sd_diff = std::sqrt(ss / (n - 1));
    if (r.sd_diff == 0.0) {
        // identical samples are a well-defined no-effect result; a constant
        // nonzero shift leaves t undefined
        if (r.mean_diff == 0.0) {
            r.df = n - 1;
            r.t = 0.0;
            r.p = 1.0;
            r.cohens_d = 0.0;
            return r;
        }
        fail(errc::degenerate_differences, "all paired differences are identical");
    }
    r.df = n - 1;
    r.t = r.mean_diff / (r.sd_diff / std::sqrt(static_cast<double>(n)));
    r.p = student_t_two_sided_p(r.t, r.df);
    r.cohens_d = r.mean_diff / r.sd_diff;
    return r;
}

AnovaResult one_way_anova(const std::vector<SampleSet>& groups) {
    if (groups.size() < 2) fail(errc::invalid_samples, "ANOVA needs at least two groups");
    AnovaResult r;
    r.groups = static_cast<int>(groups.size());
    double grand_sum = 0.0;
    int total_n = 0;
    for (const auto& g : groups) {
        if (g.values.size() < 2)
            fail(errc::invalid_samples, "every group needs at least two values");
        for (double v : g.values) grand_sum += v;
        total_n += static_cast<int>(g.values.size());
    }
    double grand_mean = grand_sum / total_n;
    double ssb = 0.0, ssw = 0.0;
    for (const auto& g : groups) {
        double m = 0.0;
        for (double v : g.values) m += v;
        m /= static_cast<double>(g.values.size());
        ssb += static_cast<double>(g.values.size()) * (m - grand_mean) * (m - grand_mean);
        for (double v : g.values) ssw += (v - m) * (v - m);
    }
    r.total_n = total_n;
    r.df_between = r.groups - 1;
    r.df_within = total_n - r.groups;
    r.ms_between = ssb / r.df_between;
    r.ms_within = ssw / r.df_within;
    if (r.ms_within == 0.0)
        fail(errc::degenerate_within_variance, "zero within-group variance");
    r.f = r.ms_between / r.ms_within;
    r.p = f_dist_sf(r.f, r.df_between, r.df_within);
    return r;
}

std::vector<double> bonferroni(const std::vector<double>& pvals) {
    std::vector<double> out;
    out.reserve(pvals.size());
    double m = static_cast<double>(pvals.size());
    for (double p : pvals) {
        if (p < 0.0 || p > 1.0 || !std::isfinite(p))
            fail(errc::invalid_samples, "p-value outside [0, 1]");
        out.push_back(std::min(1.0, m * p));
    }
    return out;
}

} // namespace loclab
