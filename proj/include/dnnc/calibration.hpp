#pragma once

// Forecast diagnostics: probability calibration curves, marginal calibration,
// mean log scores with k-fold cross-validation, isotonic recalibration and the
// Gaussian DNN baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dnnc/error.hpp"
#include "dnnc/margin.hpp"
#include "dnnc/random.hpp"
#include "dnnc/stats.hpp"

namespace dnnc {

/// 0.01, 0.02, ..., 0.99 for k = 99.
inline std::vector<double> default_p_grid(int k = 99) {
    std::vector<double> p(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) p[static_cast<std::size_t>(j)] = double(j + 1) / double(k + 1);
    return p;
}

/// p_tilde_j = (1/n) #{i : u_i < p_j}, where u_i = F_i(y_i | x_i).
inline std::vector<double> probability_calibration(std::span<const double> u, std::span<const double> p_grid) {
    std::vector<double> sorted(u.begin(), u.end());
    for (double v : sorted)
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError("probability_calibration: values must lie in [0,1]");
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> out(p_grid.size());
    for (std::size_t j = 0; j < p_grid.size(); ++j) {
        const auto below = std::lower_bound(sorted.begin(), sorted.end(), p_grid[j]) - sorted.begin();
        out[j] = static_cast<double>(below) / static_cast<double>(sorted.size());
    }
    return out;
}

inline double max_abs_deviation(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[k]));
    return d;
}

struct LogScore {
    double mean = 0.0;
    double standard_error = 0.0;
    std::vector<std::size_t> non_finite;  // observations where the density is zero

    bool finite() const { return non_finite.empty(); }
};

/// Mean of log predictive densities; zero densities yield -inf and are listed.
inline LogScore mean_log_score(std::span<const double> log_densities) {
    LogScore s;
    if (log_densities.empty()) throw DomainError("mean_log_score: no observations");
    std::vector<double> finite;
    for (std::size_t i = 0; i < log_densities.size(); ++i) {
        if (std::isfinite(log_densities[i]))
            finite.push_back(log_densities[i]);
        else
            s.non_finite.push_back(i);
    }
    if (!s.finite()) {
        s.mean = -std::numeric_limits<double>::infinity();
        s.standard_error = std::numeric_limits<double>::quiet_NaN();
        return s;
    }
    s.mean = mean(finite);
    s.standard_error = finite.size() > 1 ? std::sqrt(variance(finite) / double(finite.size())) : 0.0;
    return s;
}

/// Random partition of 0..n-1 into `folds` groups of near-equal size.
inline std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, int folds, std::uint64_t seed) {
    if (folds < 2) throw DomainError("kfold: need at least two folds");
    if (n < static_cast<std::size_t>(folds)) throw DomainError("kfold: fewer observations than folds");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = make_rng(seed, 0x666f6c64);
    shuffle_in_place(order, rng);
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(folds));
    for (std::size_t i = 0; i < n; ++i) out[i % static_cast<std::size_t>(folds)].push_back(order[i]);
    for (auto& f : out) std::sort(f.begin(), f.end());
    return out;
}

struct KfoldScore {
    double mean = 0.0;
    double standard_error = 0.0;  // across fold means
    std::vector<double> fold_means;
    std::vector<std::size_t> non_finite;  // original indices
};

/// fit_and_score(train indices, test indices, fold index) returns log predictive
/// densities of the test observations under a model fitted on the train indices.
using FoldScorer =
    std::function<std::vector<double>(const std::vector<std::size_t>&, const std::vector<std::size_t>&, int)>;

inline KfoldScore kfold_mls(std::size_t n, int folds, std::uint64_t seed, const FoldScorer& fit_and_score) {
    const auto parts = kfold_partition(n, folds, seed);
    KfoldScore out;
    for (int k = 0; k < folds; ++k) {
        const auto& test = parts[static_cast<std::size_t>(k)];
        std::vector<std::size_t> train;
        for (int l = 0; l < folds; ++l)
            if (l != k) train.insert(train.end(), parts[static_cast<std::size_t>(l)].begin(), parts[static_cast<std::size_t>(l)].end());
        std::sort(train.begin(), train.end());
        const auto logd = fit_and_score(train, test, k);
        if (logd.size() != test.size()) throw ShapeError("kfold_mls: scorer returned the wrong number of values");
        const auto s = mean_log_score(logd);
        for (std::size_t i : s.non_finite) out.non_finite.push_back(test[i]);
        out.fold_means.push_back(s.mean);
    }
    std::sort(out.non_finite.begin(), out.non_finite.end());
    if (!out.non_finite.empty()) {
        out.mean = -std::numeric_limits<double>::infinity();
        out.standard_error = std::numeric_limits<double>::quiet_NaN();
        return out;
    }
    out.mean = mean(out.fold_means);
    out.standard_error = std::sqrt(variance(out.fold_means) / double(folds));
    return out;
}

/// Weighted least-squares isotonic (nondecreasing) fit by pool adjacent violators.
inline std::vector<double> pava(std::span<const double> y, std::span<const double> w = {}) {
    struct Block {
        double sum, weight;
        std::size_t count;
    };
    std::vector<Block> blocks;
    blocks.reserve(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double wi = w.empty() ? 1.0 : w[i];
        blocks.push_back({y[i] * wi, wi, 1});
        while (blocks.size() > 1) {
            const auto& b = blocks.back();
            const auto& a = blocks[blocks.size() - 2];
            if (a.sum / a.weight <= b.sum / b.weight) break;
            Block merged{a.sum + b.sum, a.weight + b.weight, a.count + b.count};
            blocks.pop_back();
            blocks.back() = merged;
        }
    }
    std::vector<double> out;
    out.reserve(y.size());
    for (const auto& b : blocks) out.insert(out.end(), b.count, b.sum / b.weight);
    return out;
}

/// Monotone recalibration map p -> p' on [0,1], piecewise linear through the
/// isotonic fit of empirical coverage against nominal level, pinned at (0,0) and (1,1).
class IsotonicMap {
public:
    IsotonicMap() : x_{0.0, 1.0}, y_{0.0, 1.0} {}

    /// Fits from training forecasts evaluated at the truth, u_i = F_i(y_i).
    static IsotonicMap fit(std::span<const double> u) {
        std::vector<double> p(u.begin(), u.end());
        for (double v : p)
            if (!(v >= 0.0 && v <= 1.0)) throw DomainError("recalibrate_isotonic: values must lie in [0,1]");
        std::sort(p.begin(), p.end());
        const double n = static_cast<double>(p.size());
        std::vector<double> xs, target, weight;
        for (std::size_t i = 0; i < p.size();) {
            std::size_t j = i;
            while (j < p.size() && p[j] == p[i]) ++j;
            xs.push_back(p[i]);
            target.push_back(static_cast<double>(j) / n);  // empirical P(U <= p_i)
            weight.push_back(static_cast<double>(j - i));
            i = j;
        }
        const auto fitted = pava(target, weight);
        IsotonicMap m;
        m.x_.clear();
        m.y_.clear();
        if (xs.front() > 0.0) {
            m.x_.push_back(0.0);
            m.y_.push_back(0.0);
        }
        for (std::size_t k = 0; k < xs.size(); ++k) {
            m.x_.push_back(xs[k]);
            m.y_.push_back(std::clamp(fitted[k], 0.0, 1.0));
        }
        if (m.x_.back() < 1.0) {
            m.x_.push_back(1.0);
            m.y_.push_back(1.0);
        }
        return m;
    }

    double operator()(double p) const {
        if (p <= x_.front()) return y_.front();
        if (p >= x_.back()) return y_.back();
        const auto k = static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), p) - x_.begin());
        const double t = (p - x_[k - 1]) / (x_[k] - x_[k - 1]);
        return y_[k - 1] + t * (y_[k] - y_[k - 1]);
    }

    /// Generalized inverse: smallest p with map(p) >= target.
    double inverse(double target) const {
        if (target <= y_.front()) return x_.front();
        if (target >= y_.back()) return x_.back();
        const auto k = static_cast<std::size_t>(std::lower_bound(y_.begin(), y_.end(), target) - y_.begin());
        if (y_[k] == y_[k - 1]) return x_[k];
        const double t = (target - y_[k - 1]) / (y_[k] - y_[k - 1]);
        return x_[k - 1] + t * (x_[k] - x_[k - 1]);
    }

    const std::vector<double>& knots() const { return x_; }
    const std::vector<double>& values() const { return y_; }

private:
    std::vector<double> x_, y_;
};

inline IsotonicMap recalibrate_isotonic(std::span<const double> u) { return IsotonicMap::fit(u); }

/// Plain DNN forecaster N(f(x), sigma^2), sigma^2 the training residual variance.
struct GaussianForecast {
    double mean = 0.0;
    double sd = 1.0;

    double log_density(double y) const { return norm_logpdf((y - mean) / sd) - std::log(sd); }
    double density(double y) const { return std::exp(log_density(y)); }
    double cdf(double y) const { return norm_cdf((y - mean) / sd); }
    double quantile(double p) const { return mean + sd * norm_quantile(p); }
};

/// sup_k |F_a(y_k) - F_b(y_k)| over a grid.
inline double sup_distance(std::span<const double> cdf_a, std::span<const double> cdf_b) {
    if (cdf_a.size() != cdf_b.size()) throw ShapeError("sup_distance: curves have different lengths");
    return max_abs_deviation(cdf_a, cdf_b);
}

struct CalibrationReport {
    std::string method;
    std::vector<double> p_grid;
    std::vector<double> p_tilde;
    std::vector<double> y_grid;
    std::vector<double> average_density;
    std::vector<double> average_cdf;
    std::vector<double> margin_density;
    std::vector<double> margin_cdf;
    LogScore in_sample;
    bool has_kfold = false;
    KfoldScore kfold;

    double probability_deviation() const { return max_abs_deviation(p_tilde, p_grid); }
    double marginal_sup_distance() const { return sup_distance(average_cdf, margin_cdf); }
};

inline void write_probability_csv(std::ostream& os, const CalibrationReport& r) {
    os << "p,p_tilde\n";
    char buf[64];
    for (std::size_t j = 0; j < r.p_grid.size(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", r.p_grid[j], r.p_tilde[j]);
        os << buf;
    }
}

inline void write_marginal_csv(std::ostream& os, const CalibrationReport& r) {
    os << "y,average_density,margin_density,average_cdf,margin_cdf\n";
    char buf[128];
    for (std::size_t k = 0; k < r.y_grid.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", r.y_grid[k], r.average_density[k],
                      r.margin_density[k], r.average_cdf[k], r.margin_cdf[k]);
        os << buf;
    }
}

namespace detail {
inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
}  // namespace detail

inline nlohmann::json summary_json(const CalibrationReport& r) {
    nlohmann::json j{{"method", r.method},
                     {"in_sample_mls", detail::finite_or_null(r.in_sample.mean)},
                     {"in_sample_se", detail::finite_or_null(r.in_sample.standard_error)},
                     {"in_sample_non_finite", r.in_sample.non_finite},
                     {"marginal_sup_distance", r.marginal_sup_distance()},
                     {"probability_max_deviation", r.probability_deviation()}};
    if (r.has_kfold) {
        j["kfold_mls"] = detail::finite_or_null(r.kfold.mean);
        j["kfold_se"] = detail::finite_or_null(r.kfold.standard_error);
        j["kfold_fold_means"] = nlohmann::json::array();
        for (double v : r.kfold.fold_means) j["kfold_fold_means"].push_back(detail::finite_or_null(v));
        j["kfold_non_finite"] = r.kfold.non_finite;
    }
    return j;
}

}  // namespace dnnc
