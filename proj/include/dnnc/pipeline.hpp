#pragma once

// End-to-end estimators on tabular data: the copula regression (margin,
// pseudo-responses, network basis, output-layer posterior) and the plain
// Gaussian DNN baseline, plus their on-disk bundles.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dnnc/calibration.hpp"
#include "dnnc/copula.hpp"
#include "dnnc/io.hpp"
#include "dnnc/margin.hpp"
#include "dnnc/nnet.hpp"
#include "dnnc/predict.hpp"
#include "dnnc/random.hpp"

namespace dnnc {

/// Column-wise rescaling to [0, 1] with training minima and ranges; constant
/// columns map to 0.
struct FeatureScaler {
    Vector lower, range;

    static FeatureScaler fit(const Matrix& X) {
        FeatureScaler s;
        s.lower = X.colwise().minCoeff().transpose();
        s.range = (X.colwise().maxCoeff().transpose() - s.lower);
        for (Eigen::Index c = 0; c < s.range.size(); ++c)
            if (!(s.range(c) > 0.0)) s.range(c) = 0.0;
        return s;
    }

    Matrix apply(const Matrix& X) const {
        if (X.cols() != lower.size()) throw ShapeError("feature scaler: column count mismatch");
        Matrix out(X.rows(), X.cols());
        for (Eigen::Index c = 0; c < X.cols(); ++c)
            out.col(c) = range(c) > 0.0 ? Vector((X.col(c).array() - lower(c)) / range(c)) : Vector::Zero(X.rows());
        return out;
    }

    nlohmann::json to_json() const {
        return {{"lower", std::vector<double>(lower.data(), lower.data() + lower.size())},
                {"range", std::vector<double>(range.data(), range.data() + range.size())}};
    }
    static FeatureScaler from_json(const nlohmann::json& j) {
        auto lo = j.at("lower").get<std::vector<double>>();
        auto ra = j.at("range").get<std::vector<double>>();
        if (lo.size() != ra.size()) throw DataError("scaler JSON: length mismatch");
        FeatureScaler s;
        s.lower = Eigen::Map<Vector>(lo.data(), static_cast<Eigen::Index>(lo.size()));
        s.range = Eigen::Map<Vector>(ra.data(), static_cast<Eigen::Index>(ra.size()));
        return s;
    }
};

struct DnncOptions {
    PriorKind variant = PriorKind::horseshoe;
    nn::FfnOptions ffn;
    nn::TrainConfig train;
    McmcConfig mcmc;
    KdeOptions kde;
};

struct DnncFit {
    FeatureScaler scaler;
    std::shared_ptr<const MarginModel> margin;
    std::shared_ptr<const nn::Network> net;
    PosteriorDraws draws;
    PredictiveModel model;
    int best_epoch = 0;

    std::vector<PointPrediction> predict(const Matrix& X) const { return model.at_rows(scaler.apply(X)); }

    std::vector<double> log_density(const Matrix& X, std::span<const double> y) const {
        const auto preds = predict(X);
        std::vector<double> out(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) out[i] = model.log_density(preds[i], y[i]);
        return out;
    }

    std::vector<double> cdf_at(const Matrix& X, std::span<const double> y) const {
        const auto preds = predict(X);
        std::vector<double> out(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) out[i] = model.cdf(preds[i], y[i]);
        return out;
    }
};

/// Margin of y, pseudo-responses, feed-forward basis trained on them, and the
/// output-layer posterior under the chosen shrinkage prior.
inline DnncFit fit_dnnc(const Matrix& X, std::span<const double> y, const DnncOptions& opt, std::uint64_t seed) {
    if (X.rows() != static_cast<Eigen::Index>(y.size())) throw ShapeError("fit_dnnc: X and y disagree");
    DnncFit f;
    f.scaler = FeatureScaler::fit(X);
    const Matrix Xs = f.scaler.apply(X);
    f.margin = std::make_shared<const MarginModel>(fit_kde(y, opt.kde));
    const auto zs = f.margin->to_pseudo(y);
    const Vector z = Eigen::Map<const Vector>(zs.data(), static_cast<Eigen::Index>(zs.size()));
    auto cfg = opt.train;
    cfg.seed = splitmix64(seed ^ 0x747261696eULL);
    auto ffn = opt.ffn;
    ffn.fit_intercept = false;
    auto result = nn::train(nn::build_ffn(static_cast<int>(X.cols()), splitmix64(seed ^ 0x6e6574ULL), ffn), Xs, z, cfg);
    f.best_epoch = result.best_epoch;
    f.net = std::make_shared<const nn::Network>(std::move(result.net));
    const Matrix B = nn::extract_basis(*f.net, Xs);
    auto mc = opt.mcmc;
    mc.seed = splitmix64(seed ^ 0x6d636d63ULL);
    f.draws = run_mcmc_pseudo(z, B, opt.variant, mc);
    f.model = PredictiveModel(f.margin, f.net, f.draws);
    return f;
}

/// Feed-forward network fitted directly to standardized y with an intercept;
/// predictive N(f(x), sigma^2) with sigma^2 the training residual variance.
struct DnnFit {
    FeatureScaler scaler;
    nn::Network net;
    double y_mean = 0.0;
    double y_sd = 1.0;
    double sigma = 1.0;
    int best_epoch = 0;

    std::vector<GaussianForecast> predict(const Matrix& X) const {
        const Vector f = nn::predict(net, scaler.apply(X));
        std::vector<GaussianForecast> out(static_cast<std::size_t>(f.size()));
        for (Eigen::Index i = 0; i < f.size(); ++i) out[static_cast<std::size_t>(i)] = {y_mean + y_sd * f(i), sigma};
        return out;
    }

    std::vector<double> log_density(const Matrix& X, std::span<const double> y) const {
        const auto g = predict(X);
        std::vector<double> out(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) out[i] = g[i].log_density(y[i]);
        return out;
    }

    std::vector<double> cdf_at(const Matrix& X, std::span<const double> y) const {
        const auto g = predict(X);
        std::vector<double> out(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) out[i] = g[i].cdf(y[i]);
        return out;
    }
};

inline DnnFit fit_dnn(const Matrix& X, std::span<const double> y, const DnncOptions& opt, std::uint64_t seed) {
    if (X.rows() != static_cast<Eigen::Index>(y.size())) throw ShapeError("fit_dnn: X and y disagree");
    DnnFit f;
    f.scaler = FeatureScaler::fit(X);
    const Matrix Xs = f.scaler.apply(X);
    f.y_mean = mean(y);
    f.y_sd = std::sqrt(variance(y));
    if (!(f.y_sd > 0.0)) throw DegenerateMarginError("fit_dnn: response has zero variance");
    Vector z(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) z(static_cast<Eigen::Index>(i)) = (y[i] - f.y_mean) / f.y_sd;
    auto cfg = opt.train;
    cfg.seed = splitmix64(seed ^ 0x747261696eULL);
    auto ffn = opt.ffn;
    ffn.fit_intercept = true;
    auto result = nn::train(nn::build_ffn(static_cast<int>(X.cols()), splitmix64(seed ^ 0x6e6574ULL), ffn), Xs, z, cfg);
    f.best_epoch = result.best_epoch;
    f.net = std::move(result.net);
    const Vector resid = (nn::predict(f.net, Xs) - z) * f.y_sd;
    f.sigma = std::sqrt(resid.squaredNorm() / double(resid.size()));
    return f;
}

// ---------------------------------------------------------------------------
// Calibration reports

template <class Cdf, class Pdf>
CalibrationReport build_report(const std::string& method, const MarginModel& margin, std::span<const double> u,
                               std::span<const double> log_dens, Cdf&& avg_cdf, Pdf&& avg_pdf) {
    CalibrationReport r;
    r.method = method;
    r.p_grid = default_p_grid();
    r.p_tilde = probability_calibration(u, r.p_grid);
    r.y_grid = margin_grid(margin);
    r.average_cdf = avg_cdf(r.y_grid);
    r.average_density = avg_pdf(r.y_grid);
    for (double y : r.y_grid) {
        r.margin_cdf.push_back(margin.cdf(y));
        r.margin_density.push_back(margin.pdf(y));
    }
    r.in_sample = mean_log_score(log_dens);
    return r;
}

inline CalibrationReport calibration_report(const DnncFit& f, const Matrix& X, std::span<const double> y) {
    const auto preds = f.predict(X);
    std::vector<double> u(y.size()), ld(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        u[i] = f.model.cdf(preds[i], y[i]);
        ld[i] = f.model.log_density(preds[i], y[i]);
    }
    const auto& m = *f.margin;
    return build_report(
        "dnnc-" + to_string(f.draws.kind), m, u, ld,
        [&](const std::vector<double>& g) { return average_predictive_cdf(m, preds, g); },
        [&](const std::vector<double>& g) { return average_predictive_density(m, preds, g); });
}

/// The baseline report measures marginal calibration against the same KDE margin.
inline CalibrationReport calibration_report(const DnnFit& f, const MarginModel& margin, const Matrix& X,
                                            std::span<const double> y) {
    const auto g = f.predict(X);
    std::vector<double> u(y.size()), ld(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        u[i] = g[i].cdf(y[i]);
        ld[i] = g[i].log_density(y[i]);
    }
    auto average = [&](const std::vector<double>& grid, bool pdf) {
        std::vector<double> out(grid.size(), 0.0);
        for (const auto& fc : g)
            for (std::size_t k = 0; k < grid.size(); ++k) out[k] += pdf ? fc.density(grid[k]) : fc.cdf(grid[k]);
        for (double& v : out) v /= double(g.size());
        return out;
    };
    return build_report(
        "dnn", margin, u, ld, [&](const std::vector<double>& grid) { return average(grid, false); },
        [&](const std::vector<double>& grid) { return average(grid, true); });
}

// ---------------------------------------------------------------------------
// Bundles

namespace bundle {

inline void save_draws(const std::filesystem::path& dir, const PosteriorDraws& d) {
    std::ostringstream csv;
    write_draws_csv(csv, d);
    write_text(dir / "draws.csv", csv.str());
    write_json(dir / "draws.json", draws_header(d));
}

inline PosteriorDraws load_draws(const std::filesystem::path& dir) {
    const auto header = read_json(dir / "draws.json");
    const auto table = read_csv(dir / "draws.csv");
    return draws_from_table(header, table.rows);
}

/// margin.json, network.json, draws.csv and draws.json under dir.
inline void save_copula_model(const std::filesystem::path& dir, const MarginModel& m, const nn::Network& net,
                              const PosteriorDraws& d) {
    std::filesystem::create_directories(dir);
    write_json(dir / "margin.json", to_json(m));
    write_json(dir / "network.json", nn::to_json(net));
    save_draws(dir, d);
}

struct CopulaModelFiles {
    std::shared_ptr<const MarginModel> margin;
    std::shared_ptr<const nn::Network> net;
    PosteriorDraws draws;
    PredictiveModel model;
};

inline CopulaModelFiles load_copula_model(const std::filesystem::path& dir) {
    CopulaModelFiles f;
    f.margin = std::make_shared<const MarginModel>(margin_from_json(read_json(dir / "margin.json")));
    f.net = std::make_shared<const nn::Network>(nn::network_from_json(read_json(dir / "network.json")));
    f.draws = load_draws(dir);
    f.model = PredictiveModel(f.margin, f.net, f.draws);
    return f;
}

}  // namespace bundle

}  // namespace dnnc
