#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "cpetrunc/errors.hpp"
#include "cpetrunc/experiments.hpp"

namespace cpetrunc {

namespace {

std::vector<std::size_t> encode_levels(const std::vector<std::string>& labels, std::size_t& level_count) {
    std::map<std::string, std::size_t> index;
    std::vector<std::size_t> codes;
    codes.reserve(labels.size());
    for (const auto& l : labels) {
        auto [it, inserted] = index.try_emplace(l, index.size());
        codes.push_back(it->second);
    }
    level_count = index.size();
    return codes;
}

// Continued fraction for I_x(a, b), modified Lentz.
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 10000;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    throw Error(ErrorCategory::numeric, "regularized_incomplete_beta: continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw InvalidArgument("regularized_incomplete_beta: a, b must be > 0");
    if (!(x >= 0.0 && x <= 1.0)) throw InvalidArgument("regularized_incomplete_beta: x must be in [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double f_upper_tail(double f, double df1, double df2) {
    if (!(df1 > 0.0) || !(df2 > 0.0)) throw InvalidArgument("f_upper_tail: degrees of freedom must be > 0");
    if (std::isnan(f)) return std::numeric_limits<double>::quiet_NaN();
    if (f <= 0.0) return 1.0;
    if (std::isinf(f)) return 0.0;
    return regularized_incomplete_beta(0.5 * df2, 0.5 * df1, df2 / (df2 + df1 * f));
}

AnovaTable two_way_anova(const std::vector<double>& response, const std::vector<std::string>& factor_a,
                         const std::vector<std::string>& factor_b, const std::string& name_a,
                         const std::string& name_b) {
    const std::size_t n = response.size();
    if (factor_a.size() != n || factor_b.size() != n)
        throw InvalidArgument("two_way_anova: factor labels do not match response length");
    std::size_t la = 0, lb = 0;
    const auto ca = encode_levels(factor_a, la);
    const auto cb = encode_levels(factor_b, lb);
    if (la < 2 || lb < 2) throw InvalidArgument("two_way_anova: each factor needs at least two levels");

    std::vector<double> cell_sum(la * lb, 0.0);
    std::vector<std::size_t> cell_n(la * lb, 0);
    double grand = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cell_sum[ca[i] * lb + cb[i]] += response[i];
        ++cell_n[ca[i] * lb + cb[i]];
        grand += response[i];
    }
    const std::size_t reps = cell_n.front();
    for (const auto c : cell_n)
        if (c != reps || c == 0) throw InvalidArgument("two_way_anova: design is not balanced");
    if (reps < 2) throw InvalidArgument("two_way_anova: zero residual degrees of freedom");
    grand /= static_cast<double>(n);

    std::vector<double> cell_mean(la * lb), mean_a(la, 0.0), mean_b(lb, 0.0);
    for (std::size_t i = 0; i < la; ++i)
        for (std::size_t j = 0; j < lb; ++j) {
            const double m = cell_sum[i * lb + j] / static_cast<double>(reps);
            cell_mean[i * lb + j] = m;
            mean_a[i] += m / static_cast<double>(lb);
            mean_b[j] += m / static_cast<double>(la);
        }

    const auto r = static_cast<double>(reps);
    double ss_a = 0.0, ss_b = 0.0, ss_ab = 0.0, ss_e = 0.0, ss_t = 0.0;
    for (std::size_t i = 0; i < la; ++i) ss_a += static_cast<double>(lb) * r * std::pow(mean_a[i] - grand, 2);
    for (std::size_t j = 0; j < lb; ++j) ss_b += static_cast<double>(la) * r * std::pow(mean_b[j] - grand, 2);
    for (std::size_t i = 0; i < la; ++i)
        for (std::size_t j = 0; j < lb; ++j)
            ss_ab += r * std::pow(cell_mean[i * lb + j] - mean_a[i] - mean_b[j] + grand, 2);
    for (std::size_t k = 0; k < n; ++k) {
        ss_e += std::pow(response[k] - cell_mean[ca[k] * lb + cb[k]], 2);
        ss_t += std::pow(response[k] - grand, 2);
    }

    AnovaTable t;
    const int df_a = static_cast<int>(la) - 1, df_b = static_cast<int>(lb) - 1;
    const int df_e = static_cast<int>(la * lb * (reps - 1));
    t.residuals = {"Residuals", df_e, ss_e, ss_e / df_e};
    auto effect = [&](const std::string& name, int df, double ss) {
        AnovaRow row{name, df, ss, ss / df};
        row.f = row.mean_sq / t.residuals.mean_sq;
        row.p = f_upper_tail(row.f, df, df_e);
        return row;
    };
    t.factor_a = effect(name_a, df_a, ss_a);
    t.factor_b = effect(name_b, df_b, ss_b);
    t.interaction = effect(name_a + ":" + name_b, df_a * df_b, ss_ab);
    t.total_sum_sq = ss_t;
    t.total_df = static_cast<int>(n) - 1;
    return t;
}

}  // namespace cpetrunc
