#pragma once

// Invariant response margin: a Gaussian kernel density estimate whose
// bandwidth minimizes the Shimazaki-Shinomoto cross-validated L2 cost.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dnnc/error.hpp"
#include "dnnc/random.hpp"
#include "dnnc/stats.hpp"

namespace dnnc {

struct KdeOptions {
    int grid_size = 61;
    double lower_factor = 0.1;  // lower bound: sd * n^(-1/5) * lower_factor
    double upper_factor = 10.0; // upper bound: sd * upper_factor
    double epsilon = 1e-6;      // clamp for F_Y before the normal quantile
};

/// FNV-1a over the bit patterns of a sample.
inline std::uint64_t sample_hash(std::span<const double> x) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : x) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

class MarginModel {
public:
    MarginModel() = default;
    MarginModel(std::vector<double> sample, double bandwidth, double epsilon)
        : sample_(std::move(sample)), h_(bandwidth), eps_(epsilon) {
        std::sort(sample_.begin(), sample_.end());
        if (sample_.empty()) throw DomainError("margin: empty sample");
        if (!(h_ > 0.0)) throw DomainError("margin: bandwidth must be positive");
        if (!(eps_ > 0.0 && eps_ <= 0.01)) throw DomainError("margin: clamp epsilon must lie in (0, 0.01]");
        build_table();
    }

    const std::vector<double>& sample() const { return sample_; }
    double bandwidth() const { return h_; }
    double epsilon() const { return eps_; }
    std::size_t size() const { return sample_.size(); }

    /// Kernels farther than this many bandwidths are treated as exactly 0 / 1.
    static constexpr double kCutoff = 38.0;

    double pdf(double y) const {
        const auto [lo, hi] = window(y);
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += norm_pdf((y - sample_[i]) / h_);
        return s / (static_cast<double>(sample_.size()) * h_);
    }

    double log_pdf(double y) const { return std::log(pdf(y)); }

    /// Unclamped mixture CDF.
    double cdf(double y) const {
        const auto [lo, hi] = window(y);
        double s = static_cast<double>(lo);  // kernels entirely to the left
        for (std::size_t i = lo; i < hi; ++i) s += norm_cdf((y - sample_[i]) / h_);
        return s / static_cast<double>(sample_.size());
    }

    double clamped_cdf(double y) const { return std::clamp(cdf(y), eps_, 1.0 - eps_); }

    /// 1 - F_Y(y), accurate in the upper tail.
    double survival(double y) const {
        const auto [lo, hi] = window(y);
        double s = static_cast<double>(sample_.size() - hi);  // kernels entirely to the right
        for (std::size_t i = lo; i < hi; ++i) s += norm_cdf((sample_[i] - y) / h_);
        return s / static_cast<double>(sample_.size());
    }

    /// Phi^-1(F_Y(y)) without the eps clamp, from whichever tail is accurate;
    /// bounded by about +-37.5 where the mixture tail underflows.
    double probit(double y) const {
        constexpr double tiny = 1e-300;
        const double u = cdf(y);
        if (u <= 0.5) return norm_quantile(std::max(u, tiny));
        return -norm_quantile(std::max(survival(y), tiny));
    }

    /// Inverse of probit: y with F_Y(y) = Phi(z).
    double quantile_at_probit(double z) const {
        if (!std::isfinite(z)) throw DomainError("margin quantile: non-finite normal score");
        if (std::abs(z) <= 5.0) return quantile(norm_cdf(z));  // both tails still resolved by cdf
        const bool upper = z > 0.0;
        const double target = norm_cdf(-std::abs(z));
        double lo = sample_.front() - kCutoff * h_, hi = sample_.back() + kCutoff * h_;
        for (int it = 0; it < 200 && hi - lo > 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi))); ++it) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) break;
            const bool below = upper ? survival(mid) > target : cdf(mid) < target;
            (below ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }

    /// Inverse CDF by bisection to an interval width of 1e-10 (relative to scale for large values).
    double quantile(double u) const {
        if (!(u > 0.0 && u < 1.0)) throw DomainError("margin quantile: probability must lie in (0,1)");
        auto it = std::lower_bound(table_cdf_.begin(), table_cdf_.end(), u);
        double lo, hi;
        if (it == table_cdf_.begin()) {
            lo = sample_.front() - kCutoff * h_;
            hi = table_y_.front();
        } else if (it == table_cdf_.end()) {
            lo = table_y_.back();
            hi = sample_.back() + kCutoff * h_;
        } else {
            const auto k = static_cast<std::size_t>(it - table_cdf_.begin());
            lo = table_y_[k - 1];
            hi = table_y_[k];
        }
        const double tol = 1e-10 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
        while (hi - lo > tol) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) break;
            if (cdf(mid) < u)
                lo = mid;
            else
                hi = mid;
        }
        return 0.5 * (lo + hi);
    }

    /// z = norm_quantile(clamp(F_Y(y), eps, 1 - eps)).
    double to_pseudo(double y) const { return norm_quantile(clamped_cdf(y)); }

    std::vector<double> to_pseudo(std::span<const double> y) const {
        std::vector<double> z(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) z[i] = to_pseudo(y[i]);
        return z;
    }

    /// Exact draw from the kernel mixture.
    double draw(Rng& rng) const { return sample_[uniform_index(rng, sample_.size())] + h_ * std_normal(rng); }

    double median() const { return quantile(0.5); }

private:
    std::pair<std::size_t, std::size_t> window(double y) const {
        const auto lo = std::lower_bound(sample_.begin(), sample_.end(), y - kCutoff * h_) - sample_.begin();
        const auto hi = std::upper_bound(sample_.begin(), sample_.end(), y + kCutoff * h_) - sample_.begin();
        return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
    }

    void build_table() {
        constexpr std::size_t kTable = 2049;
        table_y_ = linspace(sample_.front() - 10.0 * h_, sample_.back() + 10.0 * h_, kTable);
        table_cdf_.resize(kTable);
        for (std::size_t i = 0; i < kTable; ++i) table_cdf_[i] = cdf(table_y_[i]);
    }

    std::vector<double> sample_;
    double h_ = 1.0;
    double eps_ = 1e-6;
    std::vector<double> table_y_, table_cdf_;
};

/// Shimazaki-Shinomoto cost for a Gaussian kernel of width w on a sorted sample:
/// (1/n^2) [ sum_{i,j} N(d_ij; 0, 2w^2) - 2 sum_{i!=j} N(d_ij; 0, w^2) ].
inline double kde_cost(std::span<const double> sorted, double w) {
    const double n = static_cast<double>(sorted.size());
    const double c2 = 1.0 / (2.0 * w * std::sqrt(std::numbers::pi));  // N(0; 0, 2w^2)
    const double c1 = 1.0 / (w * std::sqrt(2.0 * std::numbers::pi));  // N(0; 0, w^2)
    const double reach = 40.0 * w;
    double pair_sum = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        for (std::size_t j = i + 1; j < sorted.size(); ++j) {
            const double d = sorted[j] - sorted[i];
            if (d > reach) break;
            const double e = std::exp(-d * d / (4.0 * w * w));  // e^2 = exp(-d^2 / (2 w^2))
            pair_sum += c2 * e - 2.0 * c1 * e * e;
        }
    }
    return (n * c2 + 2.0 * pair_sum) / (n * n);
}

/// Step 1 of the estimator: fit the invariant margin of the response.
inline MarginModel fit_kde(std::span<const double> y, const KdeOptions& opt = {}) {
    if (y.size() < 5) throw DomainError("fit_kde: need at least 5 observations");
    for (double v : y)
        if (!std::isfinite(v)) throw DomainError("fit_kde: non-finite observation");
    std::vector<double> sorted(y.begin(), y.end());
    std::sort(sorted.begin(), sorted.end());
    const double sd = std::sqrt(variance(sorted));
    if (!(sd > 0.0) || sorted.front() == sorted.back())
        throw DegenerateMarginError("fit_kde: sample has zero variance");
    const double n = static_cast<double>(sorted.size());
    const double lo = sd * std::pow(n, -0.2) * opt.lower_factor;
    const double hi = sd * opt.upper_factor;
    double best_w = hi, best_cost = std::numeric_limits<double>::infinity();
    for (int k = 0; k < opt.grid_size; ++k) {
        const double w = lo * std::pow(hi / lo, double(k) / double(opt.grid_size - 1));
        const double c = kde_cost(sorted, w);
        if (c < best_cost) {
            best_cost = c;
            best_w = w;
        }
    }
    return {std::move(sorted), best_w, opt.epsilon};
}

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline nlohmann::json to_json(const MarginModel& m) {
    return {{"format", "dnnc-margin"}, {"version", 1},
            {"n", m.size()}, {"sample_hash", hex64(sample_hash(m.sample()))},
            {"bandwidth", m.bandwidth()}, {"epsilon", m.epsilon()}, {"sample", m.sample()}};
}

inline MarginModel margin_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "dnnc-margin") throw DataError("not a dnnc-margin document");
    auto sample = j.at("sample").get<std::vector<double>>();
    MarginModel m(std::move(sample), j.at("bandwidth").get<double>(), j.at("epsilon").get<double>());
    if (j.contains("sample_hash") && j.at("sample_hash").get<std::string>() != hex64(sample_hash(m.sample())))
        throw DataError("margin JSON: sample hash mismatch");
    return m;
}

enum class GridColumn { pdf, cdf };

/// Two-column grid export "y,pdf" or "y,cdf".
inline void write_margin_grid(std::ostream& os, const MarginModel& m, std::span<const double> grid,
                              GridColumn column) {
    char buf[64];
    os << (column == GridColumn::pdf ? "y,pdf\n" : "y,cdf\n");
    for (double y : grid) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", y, column == GridColumn::pdf ? m.pdf(y) : m.cdf(y));
        os << buf;
    }
}

}  // namespace dnnc
