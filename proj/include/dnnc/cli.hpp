#pragma once

// Batch command-line surface. Every command is a function of its resolved
// configuration, its input files and the seed; each output directory gets a
// manifest.json with the configuration hash and a content hash per file.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>
#include <nlohmann/json.hpp>

#include "dnnc/calibration.hpp"
#include "dnnc/copula.hpp"
#include "dnnc/error.hpp"
#include "dnnc/io.hpp"
#include "dnnc/lfi.hpp"
#include "dnnc/margin.hpp"
#include "dnnc/nnet.hpp"
#include "dnnc/pipeline.hpp"
#include "dnnc/predict.hpp"

namespace dnnc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kVersion = "1.0.0";

enum ExitCode { kOk = 0, kConfigError = 2, kDataError = 3, kNumericalError = 4 };

struct ExperimentConfig {
    std::string task;
    std::uint64_t seed = 0;
    std::string out;

    // regression
    std::string data, bundle;
    std::string method = "dnnc";  // dnnc | dnn
    DnncOptions dnnc;
    int folds = 10;

    // likelihood-free inference
    std::string model = "blowfly";
    std::string priors;
    std::string train_path, test_path, fits, split_fits, observed;
    int n_total = 2500;
    double split = 0.8;
    int length = 0;
    lfi::LfiOptions lfi;
    std::vector<int> params;  // 0-based; empty means all
    int replicates = 1000;
    bool data_splitting = true;
    int split_kernel2 = 8;
};

namespace detail {

inline json train_json(const nn::TrainConfig& t) {
    return {{"epochs", t.epochs},   {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
            {"beta1", t.beta1},     {"beta2", t.beta2},           {"epsilon", t.epsilon},
            {"patience", t.patience}, {"min_epochs", t.min_epochs}, {"validation_fraction", t.validation_fraction}};
}
inline void apply_train(nn::TrainConfig& t, const json& j) {
    t.epochs = j.value("epochs", t.epochs);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.learning_rate = j.value("learning_rate", t.learning_rate);
    t.beta1 = j.value("beta1", t.beta1);
    t.beta2 = j.value("beta2", t.beta2);
    t.epsilon = j.value("epsilon", t.epsilon);
    t.patience = j.value("patience", t.patience);
    t.min_epochs = j.value("min_epochs", t.min_epochs);
    t.validation_fraction = j.value("validation_fraction", t.validation_fraction);
}
inline json mcmc_json(const McmcConfig& m) { return {{"burnin", m.burnin}, {"draws", m.draws}, {"thin", m.thin}}; }
inline void apply_mcmc(McmcConfig& m, const json& j) {
    m.burnin = j.value("burnin", m.burnin);
    m.draws = j.value("draws", m.draws);
    m.thin = j.value("thin", m.thin);
}
inline json kde_json(const KdeOptions& k) {
    return {{"grid_size", k.grid_size}, {"lower_factor", k.lower_factor}, {"upper_factor", k.upper_factor},
            {"epsilon", k.epsilon}};
}
inline void apply_kde(KdeOptions& k, const json& j) {
    k.grid_size = j.value("grid_size", k.grid_size);
    k.lower_factor = j.value("lower_factor", k.lower_factor);
    k.upper_factor = j.value("upper_factor", k.upper_factor);
    k.epsilon = j.value("epsilon", k.epsilon);
}
inline json cnn_json(const nn::CnnOptions& c) {
    return {{"kernel1", c.kernel1},   {"kernel2", c.kernel2},         {"filters1", c.filters1},
            {"filters2", c.filters2}, {"dense_width", c.dense_width}, {"l2", c.l2},
            {"pool_width", c.pool_width}};
}
inline void apply_cnn(nn::CnnOptions& c, const json& j) {
    c.kernel1 = j.value("kernel1", c.kernel1);
    c.kernel2 = j.value("kernel2", c.kernel2);
    c.filters1 = j.value("filters1", c.filters1);
    c.filters2 = j.value("filters2", c.filters2);
    c.dense_width = j.value("dense_width", c.dense_width);
    c.l2 = j.value("l2", c.l2);
    c.pool_width = j.value("pool_width", c.pool_width);
}

}  // namespace detail

/// Resolved configuration; the output directory is deliberately excluded so
/// that identical runs into different directories produce identical bytes.
inline json to_json(const ExperimentConfig& c) {
    return {{"task", c.task},
            {"seed", c.seed},
            {"data", c.data},
            {"bundle", c.bundle},
            {"method", c.method},
            {"variant", to_string(c.dnnc.variant)},
            {"network", {{"hidden", c.dnnc.ffn.hidden}, {"dropout", c.dnnc.ffn.dropout}}},
            {"train", detail::train_json(c.dnnc.train)},
            {"mcmc", detail::mcmc_json(c.dnnc.mcmc)},
            {"kde", detail::kde_json(c.dnnc.kde)},
            {"folds", c.folds},
            {"lfi",
             {{"model", c.model},
              {"priors", c.priors},
              {"train_path", c.train_path},
              {"test_path", c.test_path},
              {"fits", c.fits},
              {"split_fits", c.split_fits},
              {"observed", c.observed},
              {"n_total", c.n_total},
              {"split", c.split},
              {"length", c.length},
              {"variant", to_string(c.lfi.variant)},
              {"cnn", detail::cnn_json(c.lfi.cnn)},
              {"train", detail::train_json(c.lfi.train)},
              {"mcmc", detail::mcmc_json(c.lfi.mcmc)},
              {"kde", detail::kde_json(c.lfi.kde)},
              {"params", c.params},
              {"replicates", c.replicates},
              {"data_splitting", c.data_splitting},
              {"split_kernel2", c.split_kernel2}}}};
}

inline void apply_json(ExperimentConfig& c, const json& j) {
    try {
        c.data = j.value("data", c.data);
        c.bundle = j.value("bundle", c.bundle);
        c.method = j.value("method", c.method);
        if (j.contains("variant")) c.dnnc.variant = prior_kind_from(j.at("variant"));
        if (j.contains("network")) {
            const auto& n = j.at("network");
            if (n.contains("hidden")) c.dnnc.ffn.hidden = n.at("hidden").get<std::vector<int>>();
            c.dnnc.ffn.dropout = n.value("dropout", c.dnnc.ffn.dropout);
        }
        if (j.contains("train")) detail::apply_train(c.dnnc.train, j.at("train"));
        if (j.contains("mcmc")) detail::apply_mcmc(c.dnnc.mcmc, j.at("mcmc"));
        if (j.contains("kde")) detail::apply_kde(c.dnnc.kde, j.at("kde"));
        c.folds = j.value("folds", c.folds);
        if (j.contains("lfi")) {
            const auto& l = j.at("lfi");
            c.model = l.value("model", c.model);
            c.priors = l.value("priors", c.priors);
            c.train_path = l.value("train_path", c.train_path);
            c.test_path = l.value("test_path", c.test_path);
            c.fits = l.value("fits", c.fits);
            c.split_fits = l.value("split_fits", c.split_fits);
            c.observed = l.value("observed", c.observed);
            c.n_total = l.value("n_total", c.n_total);
            c.split = l.value("split", c.split);
            c.length = l.value("length", c.length);
            if (l.contains("variant")) c.lfi.variant = prior_kind_from(l.at("variant"));
            if (l.contains("cnn")) detail::apply_cnn(c.lfi.cnn, l.at("cnn"));
            if (l.contains("train")) detail::apply_train(c.lfi.train, l.at("train"));
            if (l.contains("mcmc")) detail::apply_mcmc(c.lfi.mcmc, l.at("mcmc"));
            if (l.contains("kde")) detail::apply_kde(c.lfi.kde, l.at("kde"));
            if (l.contains("params")) c.params = l.at("params").get<std::vector<int>>();
            c.replicates = l.value("replicates", c.replicates);
            c.data_splitting = l.value("data_splitting", c.data_splitting);
            c.split_kernel2 = l.value("split_kernel2", c.split_kernel2);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (c.method != "dnnc" && c.method != "dnn") throw ConfigError("config: method must be dnnc or dnn");
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

/// Writes manifest.json listing the configuration and a hash of every other
/// file below dir.
inline void write_manifest(const fs::path& dir, const ExperimentConfig& c, const json& inputs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(fs::relative(e.path(), dir));
    std::sort(files.begin(), files.end());
    json outputs = json::object();
    for (const auto& f : files) outputs[f.generic_string()] = hex64(fnv1a(read_text(dir / f)));
    const json m{{"tool", "dnnc"},
                 {"version", kVersion},
                 {"command", c.task},
                 {"seed", c.seed},
                 {"config_hash", config_hash(c)},
                 {"config", to_json(c)},
                 {"libraries",
                  {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"boost", BOOST_LIB_VERSION}}},
                 {"inputs", inputs},
                 {"outputs", outputs}};
    write_json(dir / "manifest.json", m);
}

inline json file_entry(const std::string& path) { return {{"path", path}, {"hash", hex64(fnv1a(read_text(path)))}}; }

inline void require(const std::string& value, const char* flag) {
    if (value.empty()) throw ConfigError(std::string("missing required setting ") + flag);
}

inline fs::path prepare_out(const ExperimentConfig& c) {
    require(c.out, "--out");
    fs::create_directories(c.out);
    return c.out;
}

struct RegressionData {
    Matrix X;
    std::vector<double> y;
};

/// Header row, numeric cells, last column is the response.
inline RegressionData load_regression_csv(const std::string& path) {
    const auto t = read_csv(fs::path(path));
    if (t.cols() < 2) throw DataError(path + ": need at least one feature column and a response column");
    if (t.rows.empty()) throw DataError(path + ": no data rows");
    return {t.matrix(0, t.cols() - 1), t.column(t.cols() - 1)};
}

// ---------------------------------------------------------------------------
// Regression bundles

struct LoadedBundle {
    std::string method;
    ExperimentConfig config;
    std::optional<DnncFit> dnnc;
    std::optional<DnnFit> dnn;
};

inline void save_dnnc_bundle(const fs::path& dir, const DnncFit& f) {
    bundle::save_copula_model(dir, *f.margin, *f.net, f.draws);
    write_json(dir / "scaler.json", f.scaler.to_json());
}

inline void save_dnn_bundle(const fs::path& dir, const DnnFit& f) {
    write_json(dir / "scaler.json", f.scaler.to_json());
    write_json(dir / "network.json", nn::to_json(f.net));
    write_json(dir / "baseline.json", {{"y_mean", f.y_mean}, {"y_sd", f.y_sd}, {"sigma", f.sigma}});
}

inline LoadedBundle load_bundle(const fs::path& dir) {
    LoadedBundle b;
    const auto manifest = read_json(dir / "manifest.json");
    b.config.task = "fit";
    apply_json(b.config, manifest.at("config"));
    b.config.seed = manifest.at("seed").get<std::uint64_t>();
    b.method = b.config.method;
    const auto scaler = FeatureScaler::from_json(read_json(dir / "scaler.json"));
    if (b.method == "dnnc") {
        auto files = bundle::load_copula_model(dir);
        DnncFit f;
        f.scaler = scaler;
        f.margin = files.margin;
        f.net = files.net;
        f.draws = std::move(files.draws);
        f.model = std::move(files.model);
        b.dnnc = std::move(f);
    } else {
        DnnFit f;
        f.scaler = scaler;
        f.net = nn::network_from_json(read_json(dir / "network.json"));
        const auto base = read_json(dir / "baseline.json");
        f.y_mean = base.at("y_mean");
        f.y_sd = base.at("y_sd");
        f.sigma = base.at("sigma");
        b.dnn = std::move(f);
    }
    return b;
}

inline void cmd_fit(const ExperimentConfig& c) {
    require(c.data, "--data");
    const auto dir = prepare_out(c);
    const auto d = load_regression_csv(c.data);
    json summary{{"method", c.method}, {"n", d.X.rows()}, {"p", d.X.cols()}};
    if (c.method == "dnnc") {
        const auto f = fit_dnnc(d.X, d.y, c.dnnc, c.seed);
        save_dnnc_bundle(dir, f);
        summary["variant"] = to_string(c.dnnc.variant);
        summary["q"] = f.net->basis_size();
        summary["best_epoch"] = f.best_epoch;
        summary["margin_bandwidth"] = f.margin->bandwidth();
    } else {
        const auto f = fit_dnn(d.X, d.y, c.dnnc, c.seed);
        save_dnn_bundle(dir, f);
        summary["q"] = f.net.basis_size();
        summary["best_epoch"] = f.best_epoch;
        summary["sigma"] = f.sigma;
    }
    write_json(dir / "fit.json", summary);
    write_manifest(dir, c, {{"data", file_entry(c.data)}});
}

inline Matrix feature_rows(const Table& t, Eigen::Index p, const std::string& source) {
    if (static_cast<Eigen::Index>(t.cols()) == p) return t.matrix();
    if (static_cast<Eigen::Index>(t.cols()) == p + 1) return t.matrix(0, t.cols() - 1);
    throw DataError(source + ": expected " + std::to_string(p) + " feature columns (optionally plus the response)");
}

inline void cmd_predict(const ExperimentConfig& c) {
    require(c.bundle, "--bundle");
    require(c.data, "--data");
    const auto dir = prepare_out(c);
    const auto b = load_bundle(c.bundle);
    const auto table = read_csv(fs::path(c.data));
    const auto& scaler = b.dnnc ? b.dnnc->scaler : b.dnn->scaler;
    const Matrix X = feature_rows(table, scaler.lower.size(), c.data);
    fs::create_directories(dir / "densities");
    std::ostringstream summary;
    char name[64];
    if (b.dnnc) {
        const auto& f = *b.dnnc;
        const auto preds = f.predict(X);
        summary << "index,f,s,mean,q025,q50,q975\n";
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const auto& p = preds[i];
            summary << i + 1 << ',' << format_double(p.f) << ',' << format_double(p.s) << ','
                    << format_double(f.model.mean(p)) << ',' << format_double(f.model.quantile(p, 0.025)) << ','
                    << format_double(f.model.quantile(p, 0.5)) << ',' << format_double(f.model.quantile(p, 0.975))
                    << '\n';
            const auto grid = predictive_grid(f.model.margin(), p);
            std::ostringstream curve;
            curve << "y,density,cdf\n";
            for (double y : grid)
                curve << format_double(y) << ',' << format_double(f.model.density(p, y)) << ','
                      << format_double(f.model.cdf(p, y)) << '\n';
            std::snprintf(name, sizeof name, "obs_%05zu.csv", i + 1);
            write_text(dir / "densities" / name, curve.str());
        }
    } else {
        const auto g = b.dnn->predict(X);
        summary << "index,mean,sd,q025,q50,q975\n";
        for (std::size_t i = 0; i < g.size(); ++i) {
            summary << i + 1 << ',' << format_double(g[i].mean) << ',' << format_double(g[i].sd) << ','
                    << format_double(g[i].quantile(0.025)) << ',' << format_double(g[i].mean) << ','
                    << format_double(g[i].quantile(0.975)) << '\n';
            std::ostringstream curve;
            curve << "y,density,cdf\n";
            for (double y : linspace(g[i].quantile(1e-4), g[i].quantile(1 - 1e-4), 512))
                curve << format_double(y) << ',' << format_double(g[i].density(y)) << ','
                      << format_double(g[i].cdf(y)) << '\n';
            std::snprintf(name, sizeof name, "obs_%05zu.csv", i + 1);
            write_text(dir / "densities" / name, curve.str());
        }
    }
    write_text(dir / "predictions.csv", summary.str());
    write_manifest(dir, c, {{"bundle", file_entry((fs::path(c.bundle) / "manifest.json").string())},
                            {"data", file_entry(c.data)}});
}

inline std::vector<double> subset(std::span<const double> y, const std::vector<std::size_t>& idx) {
    std::vector<double> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(y[i]);
    return out;
}

inline Matrix subset_rows(const Matrix& X, const std::vector<std::size_t>& idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = X.row(static_cast<Eigen::Index>(idx[k]));
    return out;
}

/// Ten-fold (by default) out-of-sample mean log score of the bundle's method.
inline KfoldScore kfold_for(const ExperimentConfig& fitcfg, const RegressionData& d, int folds, std::uint64_t seed) {
    return kfold_mls(static_cast<std::size_t>(d.X.rows()), folds, seed,
                     [&](const std::vector<std::size_t>& tr, const std::vector<std::size_t>& te, int k) {
                         const Matrix Xtr = subset_rows(d.X, tr), Xte = subset_rows(d.X, te);
                         const auto ytr = subset(d.y, tr), yte = subset(d.y, te);
                         const std::uint64_t s = splitmix64(seed + static_cast<std::uint64_t>(k) + 1);
                         if (fitcfg.method == "dnnc") return fit_dnnc(Xtr, ytr, fitcfg.dnnc, s).log_density(Xte, yte);
                         return fit_dnn(Xtr, ytr, fitcfg.dnnc, s).log_density(Xte, yte);
                     });
}

inline void cmd_calibrate(const ExperimentConfig& c) {
    require(c.bundle, "--bundle");
    require(c.data, "--data");
    const auto dir = prepare_out(c);
    const auto b = load_bundle(c.bundle);
    const auto d = load_regression_csv(c.data);
    CalibrationReport report;
    std::optional<CalibrationReport> recal;
    if (b.dnnc) {
        report = calibration_report(*b.dnnc, d.X, d.y);
    } else {
        const auto margin = fit_kde(d.y, b.config.dnnc.kde);
        report = calibration_report(*b.dnn, margin, d.X, d.y);
        // isotonic recalibration fitted on these forecasts
        const auto u = b.dnn->cdf_at(d.X, d.y);
        const auto map = recalibrate_isotonic(u);
        std::vector<double> u2(u.size());
        for (std::size_t i = 0; i < u.size(); ++i) u2[i] = map(u[i]);
        CalibrationReport r2 = report;
        r2.method = "dnn-recalibrated";
        r2.p_tilde = probability_calibration(u2, r2.p_grid);
        recal = std::move(r2);
    }
    if (c.folds >= 2) {
        report.has_kfold = true;
        report.kfold = kfold_for(b.config, d, c.folds, c.seed);
    }
    std::ostringstream pc, mc;
    write_probability_csv(pc, report);
    write_marginal_csv(mc, report);
    write_text(dir / "probability_calibration.csv", pc.str());
    write_text(dir / "marginal_calibration.csv", mc.str());
    json summary = summary_json(report);
    if (recal) {
        std::ostringstream rc;
        write_probability_csv(rc, *recal);
        write_text(dir / "probability_calibration_recalibrated.csv", rc.str());
        summary["recalibrated_probability_max_deviation"] = recal->probability_deviation();
    }
    write_json(dir / "summary.json", summary);
    write_manifest(dir, c, {{"bundle", file_entry((fs::path(c.bundle) / "manifest.json").string())},
                            {"data", file_entry(c.data)}});
}

// ---------------------------------------------------------------------------
// Likelihood-free inference

inline lfi::SimModel load_model(const ExperimentConfig& c) {
    const auto kind = lfi::model_kind_from(c.model);
    auto prior = c.priors.empty() ? lfi::default_prior(kind) : lfi::prior_from_json(read_json(c.priors));
    return {kind, std::move(prior), c.length};
}

inline lfi::SimBatch read_batch(const std::string& path) { return lfi::simbatch_from_table(read_csv(fs::path(path))); }

inline void write_batch(const fs::path& file, const lfi::SimBatch& b) {
    std::ostringstream os;
    lfi::write_simbatch_csv(os, b);
    write_text(file, os.str());
}

inline std::vector<std::size_t> selected_params(const ExperimentConfig& c, std::size_t p) {
    std::vector<std::size_t> out;
    if (c.params.empty())
        for (std::size_t j = 0; j < p; ++j) out.push_back(j);
    for (int j : c.params) {
        if (j < 0 || static_cast<std::size_t>(j) >= p) throw ConfigError("lfi params: index out of range");
        out.push_back(static_cast<std::size_t>(j));
    }
    return out;
}

inline std::uint64_t param_seed(std::uint64_t seed, std::size_t j, std::uint64_t salt) {
    return splitmix64(splitmix64(seed ^ salt) + static_cast<std::uint64_t>(j));
}

/// Fits one regressor per selected parameter and stores it under dir/<name>.
inline std::vector<lfi::ParamRegressor> fit_all(const ExperimentConfig& c, const lfi::SimModel& model,
                                                const lfi::SimBatch& train, const lfi::LfiOptions& opt,
                                                const fs::path& dir, std::uint64_t salt, std::ostream& log) {
    std::vector<lfi::ParamRegressor> regs;
    json summary = json::array();
    for (std::size_t j : selected_params(c, model.dim())) {
        const auto& name = model.names()[j];
        log << "fitting " << name << "\n";
        auto r = lfi::lfi_fit(train, j, name, opt, param_seed(c.seed, j, salt));
        bundle::save_copula_model(dir / name, *r.margin, *r.net, r.draws);
        summary.push_back({{"parameter", name},
                           {"index", j},
                           {"best_epoch", r.best_epoch},
                           {"q", r.net->basis_size()},
                           {"ess_beta_min", r.draws.diagnostics.ess_beta_min},
                           {"ess_beta_median", r.draws.diagnostics.ess_beta_median}});
        regs.push_back(std::move(r));
    }
    write_json(dir / "fits.json", {{"model", lfi::to_string(model.kind)}, {"length", train.length()}, {"fits", summary}});
    return regs;
}

inline std::vector<lfi::ParamRegressor> load_fits(const fs::path& dir, const lfi::SimModel& model) {
    const auto index = read_json(dir / "fits.json");
    std::vector<lfi::ParamRegressor> regs;
    for (const auto& e : index.at("fits")) {
        lfi::ParamRegressor r;
        r.name = e.at("parameter");
        r.index = e.at("index");
        if (r.index >= model.dim() || model.names()[r.index] != r.name)
            throw DataError(dir.string() + ": fitted parameter '" + r.name + "' does not belong to the model");
        auto files = bundle::load_copula_model(dir / r.name);
        r.margin = files.margin;
        r.net = files.net;
        r.draws = std::move(files.draws);
        r.model = std::move(files.model);
        r.best_epoch = e.value("best_epoch", 0);
        regs.push_back(std::move(r));
    }
    return regs;
}

inline std::vector<double> read_series(const std::string& path) {
    const auto t = read_csv(fs::path(path));
    if (t.cols() != 1) throw DataError(path + ": observed series must be a single column");
    return t.column(0);
}

/// Posterior means of rho at the observed training prefix and composite scores
/// on the remaining 20% of the series.
inline std::vector<double> prior_medians(const lfi::SimModel& model) {
    std::vector<double> rho(model.dim());
    for (std::size_t j = 0; j < model.dim(); ++j) {
        const auto& p = model.prior[j];
        switch (p.dist) {
            case lfi::PriorDist::lognormal: rho[j] = std::exp(p.a); break;
            case lfi::PriorDist::uniform: rho[j] = 0.5 * (p.a + p.b); break;
            case lfi::PriorDist::loguniform: rho[j] = std::sqrt(p.a * p.b); break;
        }
    }
    return rho;
}

inline json observed_analysis(const ExperimentConfig& c, const lfi::SimModel& model,
                              const std::vector<lfi::ParamRegressor>& split_regs, const std::vector<double>& observed) {
    const std::size_t K = lfi::training_cut(observed.size());
    Matrix prefix(1, static_cast<Eigen::Index>(K));
    for (std::size_t t = 0; t < K; ++t) prefix(0, static_cast<Eigen::Index>(t)) = observed[t];
    auto rho_hat = prior_medians(model);  // unfitted parameters stay at the prior median
    json est = json::array();
    for (const auto& r : split_regs) {
        if (r.net->input.size() != static_cast<int>(K))
            throw DataError("split fits expect series of length " + std::to_string(r.net->input.size()) +
                            ", observed prefix has " + std::to_string(K));
        const auto p = r.model.at_rows(prefix).front();
        rho_hat[r.index] = lfi::posterior_mean_rho(r, p);
        est.push_back({{"parameter", r.name},
                       {"posterior_mean", rho_hat[r.index]},
                       {"log_q025", r.model.quantile(p, 0.025)},
                       {"log_q975", r.model.quantile(p, 0.975)}});
    }
    const auto scores = lfi::composite_scores(model, rho_hat, observed, K, c.replicates, splitmix64(c.seed ^ 0x636f6d70ULL));
    return {{"K", K},
            {"T", observed.size()},
            {"estimates", est},
            {"rho_hat", rho_hat},
            {"cls", scores.cls},
            {"ces", scores.ces},
            {"negated_ces", scores.negated_ces}};
}

inline lfi::SimBatch prefix_batch(const lfi::SimBatch& b, int K) {
    lfi::SimBatch out = b;
    out.d = b.d.leftCols(K);
    return out;
}

inline lfi::LfiOptions split_options(const ExperimentConfig& c) {
    auto opt = c.lfi;
    opt.cnn.kernel2 = c.split_kernel2;
    return opt;
}

inline void cmd_lfi_simulate(const ExperimentConfig& c) {
    const auto dir = prepare_out(c);
    const auto model = load_model(c);
    const auto [train, test] = lfi::generate_training(model, c.n_total, c.split, c.seed);
    write_batch(dir / "train.csv", train);
    write_batch(dir / "test.csv", test);
    write_json(dir / "prior.json", lfi::to_json(model.prior));
    write_json(dir / "simulate.json", {{"model", lfi::to_string(model.kind)},
                                       {"T", model.T},
                                       {"n_train", train.size()},
                                       {"n_test", test.size()},
                                       {"resampled", train.resampled}});
    json inputs = json::object();
    if (!c.priors.empty()) inputs["priors"] = file_entry(c.priors);
    write_manifest(dir, c, inputs);
}

inline void cmd_lfi_fit(const ExperimentConfig& c, std::ostream& log) {
    require(c.train_path, "--train");
    const auto dir = prepare_out(c);
    const auto model = load_model(c);
    const auto train = read_batch(c.train_path);
    if (static_cast<std::size_t>(train.rho.cols()) != model.dim())
        throw DataError(c.train_path + ": parameter columns do not match the " + c.model + " model");
    fit_all(c, model, train, c.lfi, dir, 0x66756c6cULL, log);
    if (c.data_splitting) {
        const int K = static_cast<int>(lfi::training_cut(static_cast<std::size_t>(train.length())));
        fit_all(c, model, prefix_batch(train, K), split_options(c), dir / "split", 0x73706c74ULL, log);
    }
    json inputs{{"train", file_entry(c.train_path)}};
    if (!c.priors.empty()) inputs["priors"] = file_entry(c.priors);
    write_manifest(dir, c, inputs);
}

inline json simulation_table(const lfi::SimModel& model, const std::vector<lfi::ParamRegressor>& regs,
                             const lfi::SimBatch& test) {
    return {{"model", lfi::to_string(model.kind)},
            {"n_test", test.size()},
            {"rows", lfi::to_json(lfi::eval_simulation(regs, model.prior, test))}};
}

inline void cmd_lfi_score(const ExperimentConfig& c) {
    require(c.fits, "--fits");
    require(c.test_path, "--test");
    const auto dir = prepare_out(c);
    const auto model = load_model(c);
    const auto regs = load_fits(c.fits, model);
    const auto test = read_batch(c.test_path);
    write_json(dir / "simulation.json", simulation_table(model, regs, test));
    json inputs{{"fits", file_entry((fs::path(c.fits) / "fits.json").string())}, {"test", file_entry(c.test_path)}};
    if (!c.observed.empty()) {
        const fs::path split_dir = c.split_fits.empty() ? fs::path(c.fits) / "split" : fs::path(c.split_fits);
        const auto split_regs = load_fits(split_dir, model);
        write_json(dir / "composite.json", observed_analysis(c, model, split_regs, read_series(c.observed)));
        inputs["observed"] = file_entry(c.observed);
    }
    write_manifest(dir, c, inputs);
}

/// Stand-in observed series simulated at the prior location.
inline std::vector<double> standin_series(const lfi::SimModel& model, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0x6f6273ULL);
    return model.simulate(prior_medians(model), rng);
}

inline void cmd_lfi(const ExperimentConfig& c, std::ostream& log) {
    const auto dir = prepare_out(c);
    const auto model = load_model(c);
    log << "simulating " << c.n_total << " data sets\n";
    const auto [train, test] = lfi::generate_training(model, c.n_total, c.split, c.seed);
    write_batch(dir / "train.csv", train);
    write_batch(dir / "test.csv", test);
    write_json(dir / "prior.json", lfi::to_json(model.prior));
    const auto regs = fit_all(c, model, train, c.lfi, dir / "fits", 0x66756c6cULL, log);
    json report{{"simulation", simulation_table(model, regs, test)}, {"resampled", train.resampled}};
    json inputs = json::object();
    if (!c.priors.empty()) inputs["priors"] = file_entry(c.priors);
    if (c.data_splitting) {
        std::vector<double> observed;
        if (c.observed.empty()) {
            observed = standin_series(model, c.seed);
            std::ostringstream os;
            os << "d\n";
            for (double v : observed) os << format_double(v) << '\n';
            write_text(dir / "observed.csv", os.str());
        } else {
            observed = read_series(c.observed);
            inputs["observed"] = file_entry(c.observed);
        }
        const int K = static_cast<int>(lfi::training_cut(observed.size()));
        if (K > train.length()) throw DataError("observed series is longer than the simulated series");
        const auto split_regs =
            fit_all(c, model, prefix_batch(train, K), split_options(c), dir / "fits" / "split", 0x73706c74ULL, log);
        report["composite"] = observed_analysis(c, model, split_regs, observed);
    }
    write_json(dir / "report.json", report);
    write_manifest(dir, c, inputs);
}

// ---------------------------------------------------------------------------
// Entry point

/// Runs one command; returns the process exit code.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Marginally calibrated deep distributional regression and likelihood-free inference", "dnnc"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    ExperimentConfig cfg;
    std::string config_path, variant, method;
    std::optional<int> folds, n_total, length;
    std::optional<double> split;
    struct Flags {
        std::optional<std::string> data, bundle, model, priors, train, test, fits, split_fits, observed;
    } flags;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--seed", cfg.seed, "master seed")->required();
        sub->add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
        sub->add_option("--out", cfg.out, "output directory")->required();
    };
    auto* fit = app.add_subcommand("fit", "fit a model bundle on a CSV dataset");
    common(fit);
    fit->add_option("--data", flags.data, "CSV with header; last column is the response");
    fit->add_option("--variant", variant, "horseshoe or ridge");
    fit->add_option("--method", method, "dnnc or dnn");

    auto* pred = app.add_subcommand("predict", "predictive densities for CSV rows");
    common(pred);
    pred->add_option("--bundle", flags.bundle, "bundle directory");
    pred->add_option("--data", flags.data, "CSV features");

    auto* cal = app.add_subcommand("calibrate", "calibration diagnostics and mean log scores");
    common(cal);
    cal->add_option("--bundle", flags.bundle, "bundle directory");
    cal->add_option("--data", flags.data, "CSV dataset");
    cal->add_option("--folds", folds, "cross-validation folds (0 disables)");

    auto lfi_common = [&](CLI::App* sub) {
        common(sub);
        sub->add_option("--model", flags.model, "blowfly or voles");
        sub->add_option("--priors", flags.priors, "prior JSON file");
    };
    auto* sim = app.add_subcommand("lfi-simulate", "simulate training and test batches under the prior");
    lfi_common(sim);
    sim->add_option("--n", n_total, "number of data sets");
    sim->add_option("--split", split, "training fraction");
    sim->add_option("--length", length, "series length");

    auto* lfit = app.add_subcommand("lfi-fit", "fit one marginal posterior regressor per parameter");
    lfi_common(lfit);
    lfit->add_option("--train", flags.train, "training SimBatch CSV");

    auto* lscore = app.add_subcommand("lfi-score", "simulation metrics and composite scores");
    lfi_common(lscore);
    lscore->add_option("--fits", flags.fits, "directory written by lfi-fit");
    lscore->add_option("--test", flags.test, "test SimBatch CSV");
    lscore->add_option("--observed", flags.observed, "observed series CSV (single column)");
    lscore->add_option("--split-fits", flags.split_fits, "regressors fitted on training prefixes");

    auto* lall = app.add_subcommand("lfi", "simulate, fit and score in one run");
    lfi_common(lall);
    lall->add_option("--n", n_total, "number of data sets");
    lall->add_option("--split", split, "training fraction");
    lall->add_option("--length", length, "series length");
    lall->add_option("--observed", flags.observed, "observed series CSV (single column)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForVersion& e) {
        out << kVersion << "\n";
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    }

    try {
        for (auto* sub : app.get_subcommands()) cfg.task = sub->get_name();
        if (!config_path.empty()) apply_json(cfg, read_json(config_path));
        if (flags.data) cfg.data = *flags.data;
        if (flags.bundle) cfg.bundle = *flags.bundle;
        if (flags.model) cfg.model = *flags.model;
        if (flags.priors) cfg.priors = *flags.priors;
        if (flags.train) cfg.train_path = *flags.train;
        if (flags.test) cfg.test_path = *flags.test;
        if (flags.fits) cfg.fits = *flags.fits;
        if (flags.split_fits) cfg.split_fits = *flags.split_fits;
        if (flags.observed) cfg.observed = *flags.observed;
        if (!variant.empty()) cfg.dnnc.variant = prior_kind_from(variant);
        if (!method.empty()) {
            if (method != "dnnc" && method != "dnn") throw ConfigError("--method must be dnnc or dnn");
            cfg.method = method;
        }
        if (folds) cfg.folds = *folds;
        if (n_total) cfg.n_total = *n_total;
        if (split) cfg.split = *split;
        if (length) cfg.length = *length;

        if (cfg.task == "fit") cmd_fit(cfg);
        else if (cfg.task == "predict") cmd_predict(cfg);
        else if (cfg.task == "calibrate") cmd_calibrate(cfg);
        else if (cfg.task == "lfi-simulate") cmd_lfi_simulate(cfg);
        else if (cfg.task == "lfi-fit") cmd_lfi_fit(cfg, err);
        else if (cfg.task == "lfi-score") cmd_lfi_score(cfg);
        else if (cfg.task == "lfi") cmd_lfi(cfg, err);
        return kOk;
    } catch (const ConfigError& e) {
        err << "config error [" << cfg.task << "]: " << e.what() << "\n";
        return kConfigError;
    } catch (const NumericalError& e) {
        err << "numerical failure [" << cfg.task << "]: " << e.what() << "\n";
        return kNumericalError;
    } catch (const DivergenceError& e) {
        err << "numerical failure [" << cfg.task << "]: " << e.what() << "\n";
        return kNumericalError;
    } catch (const SimulationDiverged& e) {
        err << "numerical failure [" << cfg.task << "]: " << e.what() << "\n";
        return kNumericalError;
    } catch (const Error& e) {
        err << "data error [" << cfg.task << "]: " << e.what() << "\n";
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        err << "data error [" << cfg.task << "]: " << e.what() << "\n";
        return kDataError;
    }
}

inline int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args);
}

}  // namespace dnnc::cli
