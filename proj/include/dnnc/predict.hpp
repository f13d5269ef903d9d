#pragma once

// Plug-in posterior predictive of the copula model: with f = psi(x0)'beta_hat and
// s = mean_j s0^[j], the predictive of y0 is the margin composed with
// Z0 ~ N(s f, s^2) on the pseudo-response scale.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dnnc/copula.hpp"
#include "dnnc/error.hpp"
#include "dnnc/margin.hpp"
#include "dnnc/nnet.hpp"
#include "dnnc/random.hpp"
#include "dnnc/stats.hpp"

namespace dnnc {

/// Location f_hat and averaged scaling s_hat at one feature vector.
struct PointPrediction {
    double f = 0.0;
    double s = 1.0;
    double mean_z() const { return s * f; }
};

// Predictive quantities use the unclamped normal score, so mass that falls
// beyond the eps clamp of the training pseudo-responses is kept.
inline double predict_log_density(const MarginModel& m, const PointPrediction& p, double y) {
    const double z = m.probit(y);
    return m.log_pdf(y) - norm_logpdf(z) + norm_logpdf((z - p.s * p.f) / p.s) - std::log(p.s);
}

inline double predict_density(const MarginModel& m, const PointPrediction& p, double y) {
    const double lp = predict_log_density(m, p, y);
    return std::isfinite(lp) ? std::exp(lp) : 0.0;
}

inline double predict_cdf(const MarginModel& m, const PointPrediction& p, double y) {
    return norm_cdf((m.probit(y) - p.s * p.f) / p.s);
}

inline double predict_quantile(const MarginModel& m, const PointPrediction& p, double prob) {
    if (!(prob > 0.0 && prob < 1.0)) throw DomainError("predict_quantile: probability must lie in (0,1)");
    return m.quantile_at_probit(p.s * p.f + p.s * norm_quantile(prob));
}

inline double predict_sample(const MarginModel& m, const PointPrediction& p, Rng& rng) {
    return m.quantile_at_probit(p.s * p.f + p.s * std_normal(rng));
}

/// Evaluation grid of `points` values between the predictive quantiles lo and 1 - lo.
inline std::vector<double> predictive_grid(const MarginModel& m, const PointPrediction& p, std::size_t points = 512,
                                           double lo = 1e-4) {
    return linspace(predict_quantile(m, p, lo), predict_quantile(m, p, 1.0 - lo), points);
}

/// Grid between margin quantiles lo and 1 - lo.
inline std::vector<double> margin_grid(const MarginModel& m, std::size_t points = 512, double lo = 1e-4) {
    return linspace(m.quantile(lo), m.quantile(1.0 - lo), points);
}

/// Fitted estimator: the margin, the basis network, beta_hat and the retained
/// prior variances diag(P(theta^[j])^-1), j = 1..J.
class PredictiveModel {
public:
    PredictiveModel() = default;
    PredictiveModel(std::shared_ptr<const MarginModel> margin, std::shared_ptr<const nn::Network> net,
                    Vector beta_mean, Matrix prior_variances)
        : margin_(std::move(margin)), net_(std::move(net)), beta_(std::move(beta_mean)), var_(std::move(prior_variances)) {
        if (!margin_) throw ShapeError("predictive model: missing margin");
        if (var_.rows() < 1 || var_.cols() != beta_.size()) throw ShapeError("predictive model: draws and beta_hat disagree");
        if (net_ && net_->basis_size() != beta_.size())
            throw ShapeError("predictive model: network basis width does not match beta_hat");
    }
    PredictiveModel(std::shared_ptr<const MarginModel> margin, std::shared_ptr<const nn::Network> net,
                    const PosteriorDraws& draws)
        : PredictiveModel(std::move(margin), std::move(net), draws.beta_mean, draws.prior_variances()) {}

    const MarginModel& margin() const { return *margin_; }
    const nn::Network* network() const { return net_.get(); }
    const Vector& beta_mean() const { return beta_; }
    const Matrix& prior_variances() const { return var_; }
    Eigen::Index basis_size() const { return beta_.size(); }

    PointPrediction at_basis(const Eigen::Ref<const Vector>& psi) const {
        if (psi.size() != beta_.size()) throw ShapeError("predict: basis vector has wrong length");
        const Vector quad = var_ * psi.array().square().matrix();
        return {psi.dot(beta_), (quad.array() + 1.0).rsqrt().mean()};
    }

    /// Predictions for every row of a basis matrix (n x q).
    std::vector<PointPrediction> at_basis_rows(const Matrix& B) const {
        if (B.cols() != beta_.size()) throw ShapeError("predict: basis matrix has wrong width");
        const Vector f = B * beta_;
        const Matrix quad = B.array().square().matrix() * var_.transpose();  // n x J
        std::vector<PointPrediction> out(static_cast<std::size_t>(B.rows()));
        for (Eigen::Index i = 0; i < B.rows(); ++i)
            out[static_cast<std::size_t>(i)] = {f(i), (quad.row(i).array() + 1.0).rsqrt().mean()};
        return out;
    }

    /// Predictions for feature rows (n x p) through the basis network.
    std::vector<PointPrediction> at_rows(const Matrix& X) const {
        if (!net_) throw ShapeError("predict: model has no basis network");
        return at_basis_rows(nn::extract_basis(*net_, X));
    }

    PointPrediction at(std::span<const double> x) const {
        Matrix X(1, static_cast<Eigen::Index>(x.size()));
        for (std::size_t k = 0; k < x.size(); ++k) X(0, static_cast<Eigen::Index>(k)) = x[k];
        return at_rows(X).front();
    }

    double density(const PointPrediction& p, double y) const { return predict_density(*margin_, p, y); }
    double log_density(const PointPrediction& p, double y) const { return predict_log_density(*margin_, p, y); }
    double cdf(const PointPrediction& p, double y) const { return predict_cdf(*margin_, p, y); }
    double quantile(const PointPrediction& p, double prob) const { return predict_quantile(*margin_, p, prob); }
    double sample(const PointPrediction& p, Rng& rng) const { return predict_sample(*margin_, p, rng); }

    std::vector<double> density(const PointPrediction& p, std::span<const double> grid) const {
        std::vector<double> out(grid.size());
        for (std::size_t k = 0; k < grid.size(); ++k) out[k] = density(p, grid[k]);
        return out;
    }

    /// Predictive mean by trapezoid quadrature on the standard grid.
    double mean(const PointPrediction& p) const {
        const auto grid = predictive_grid(*margin_, p);
        const auto dens = density(p, grid);
        std::vector<double> yd(grid.size());
        for (std::size_t k = 0; k < grid.size(); ++k) yd[k] = grid[k] * dens[k];
        return trapezoid(grid, yd) / trapezoid(grid, dens);
    }

private:
    std::shared_ptr<const MarginModel> margin_;
    std::shared_ptr<const nn::Network> net_;
    Vector beta_;
    Matrix var_;
};

/// Pointwise mean of the predictive densities at their own feature values.
inline std::vector<double> average_predictive_density(const MarginModel& m, std::span<const PointPrediction> preds,
                                                      std::span<const double> grid) {
    std::vector<double> out(grid.size(), 0.0);
    if (preds.empty()) return out;
    for (const auto& p : preds)
        for (std::size_t k = 0; k < grid.size(); ++k) out[k] += predict_density(m, p, grid[k]);
    for (double& v : out) v /= static_cast<double>(preds.size());
    return out;
}

/// Exact CDF of the averaged predictive density.
inline std::vector<double> average_predictive_cdf(const MarginModel& m, std::span<const PointPrediction> preds,
                                                  std::span<const double> grid) {
    std::vector<double> out(grid.size(), 0.0);
    if (preds.empty()) return out;
    std::vector<double> z(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) z[k] = m.probit(grid[k]);
    for (const auto& p : preds)
        for (std::size_t k = 0; k < grid.size(); ++k) out[k] += norm_cdf((z[k] - p.s * p.f) / p.s);
    for (double& v : out) v /= static_cast<double>(preds.size());
    return out;
}

/// Two-column CSV "y,<name>".
inline void write_curve_csv(std::ostream& os, std::span<const double> grid, std::span<const double> values,
                            const char* name) {
    if (grid.size() != values.size()) throw ShapeError("write_curve_csv: grid and values disagree");
    os << "y," << name << '\n';
    char buf[64];
    for (std::size_t k = 0; k < grid.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", grid[k], values[k]);
        os << buf;
    }
}

}  // namespace dnnc
