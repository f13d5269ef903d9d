#pragma once

// Likelihood-free inference with per-parameter copula regressions: prior
// sampling, the blowfly and voles simulators, training batches, marginal
// posterior regressors for log parameters, simulation metrics and composite
// predictive scores.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dnnc/copula.hpp"
#include "dnnc/error.hpp"
#include "dnnc/io.hpp"
#include "dnnc/margin.hpp"
#include "dnnc/nnet.hpp"
#include "dnnc/predict.hpp"
#include "dnnc/random.hpp"
#include "dnnc/stats.hpp"

namespace dnnc::lfi {

// ---------------------------------------------------------------------------
// Priors

enum class PriorDist { lognormal, uniform, loguniform };

/// Prior of one positive parameter. lognormal: log rho ~ N(a, b^2);
/// uniform: rho ~ U(a, b); loguniform: log rho ~ U(log a, log b).
struct ParamPrior {
    std::string name;
    PriorDist dist = PriorDist::lognormal;
    double a = 0.0;
    double b = 1.0;

    void validate() const {
        const bool ok = dist == PriorDist::lognormal ? (std::isfinite(a) && b > 0.0)
                                                     : (a > 0.0 && b > a && std::isfinite(b));
        if (!ok) throw ConfigError("prior for '" + name + "': invalid hyperparameters");
    }

    double draw(Rng& rng) const {
        switch (dist) {
            case PriorDist::lognormal: return std::exp(a + b * std_normal(rng));
            case PriorDist::uniform: return a + (b - a) * uniform_open(rng);
            case PriorDist::loguniform: return std::exp(std::log(a) + (std::log(b) - std::log(a)) * uniform_open(rng));
        }
        return 0.0;
    }

    /// CDF of log rho at x.
    double log_cdf(double x) const {
        switch (dist) {
            case PriorDist::lognormal: return norm_cdf((x - a) / b);
            case PriorDist::uniform: return std::clamp((std::exp(x) - a) / (b - a), 0.0, 1.0);
            case PriorDist::loguniform:
                return std::clamp((x - std::log(a)) / (std::log(b) - std::log(a)), 0.0, 1.0);
        }
        return 0.0;
    }
};

inline std::string dist_name(PriorDist d) {
    switch (d) {
        case PriorDist::lognormal: return "lognormal";
        case PriorDist::uniform: return "uniform";
        case PriorDist::loguniform: return "loguniform";
    }
    return "";
}

inline nlohmann::json to_json(const std::vector<ParamPrior>& prior) {
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : prior) {
        nlohmann::json j{{"name", p.name}, {"dist", dist_name(p.dist)}};
        if (p.dist == PriorDist::lognormal) {
            j["mu"] = p.a;
            j["sigma"] = p.b;
        } else {
            j["lower"] = p.a;
            j["upper"] = p.b;
        }
        params.push_back(std::move(j));
    }
    return {{"format", "dnnc-prior"}, {"version", 1}, {"parameters", params}};
}

inline std::vector<ParamPrior> prior_from_json(const nlohmann::json& j) {
    std::vector<ParamPrior> out;
    try {
        for (const auto& e : j.at("parameters")) {
            ParamPrior p;
            p.name = e.at("name").get<std::string>();
            const std::string d = e.at("dist").get<std::string>();
            if (d == "lognormal") {
                p.dist = PriorDist::lognormal;
                p.a = e.at("mu").get<double>();
                p.b = e.at("sigma").get<double>();
            } else if (d == "uniform" || d == "loguniform") {
                p.dist = d == "uniform" ? PriorDist::uniform : PriorDist::loguniform;
                p.a = e.at("lower").get<double>();
                p.b = e.at("upper").get<double>();
            } else {
                throw ConfigError("prior for '" + p.name + "': unknown distribution '" + d + "'");
            }
            p.validate();
            out.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("prior file: ") + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Blowfly

struct BlowflyParams {
    double delta = 0.16;
    double P = 6.5;
    double n0 = 400.0;
    double sigma_p2 = 0.1;
    double tau = 14.0;  // recruitment delay; rounded to the nearest step, at least 1
    double sigma_d2 = 0.1;

    static BlowflyParams from(std::span<const double> rho) {
        if (rho.size() != 6) throw ShapeError("blowfly: expected 6 parameters");
        return {rho[0], rho[1], rho[2], rho[3], rho[4], rho[5]};
    }
    std::vector<double> to_vector() const { return {delta, P, n0, sigma_p2, tau, sigma_d2}; }
    int lag() const { return std::max(1, static_cast<int>(std::lround(tau))); }

    void validate() const {
        if (!(delta > 0 && P > 0 && n0 > 0 && sigma_p2 >= 0 && tau > 0 && sigma_d2 >= 0))
            throw DomainError("blowfly: parameters must be positive");
    }
};

inline const std::vector<std::string>& blowfly_names() {
    static const std::vector<std::string> names{"delta", "P", "n0", "sigma_p2", "tau", "sigma_d2"};
    return names;
}

struct BlowflyOptions {
    double initial = 180.0;  // constant history
    int burnin = 50;
    double ceiling = 1e9;
};

struct BlowflyRun {
    std::vector<double> series;
    bool capped = false;
};

/// Unit-mean gamma disturbance with variance var.
inline double unit_gamma(Rng& rng, double var) { return var > 0.0 ? gamma_draw(rng, 1.0 / var, var) : 1.0; }

inline double blowfly_recruitment_mean(const BlowflyParams& p, double lagged) {
    return p.P * lagged * std::exp(-lagged / p.n0);
}

/// r_t ~ Poisson(P n_{t-tau} exp(-n_{t-tau}/n0) e_t).
inline std::int64_t blowfly_recruitment_draw(const BlowflyParams& p, double lagged, Rng& rng) {
    return poisson_draw(rng, blowfly_recruitment_mean(p, lagged) * unit_gamma(rng, p.sigma_p2));
}

/// s_t ~ Binomial(n_{t-1}, exp(-delta eps_t)).
inline std::int64_t blowfly_survival_draw(const BlowflyParams& p, std::int64_t previous, Rng& rng) {
    const double prob = std::clamp(std::exp(-p.delta * unit_gamma(rng, p.sigma_d2)), 0.0, 1.0);
    return binomial_draw(rng, previous, prob);
}

namespace detail {

template <class Step>
BlowflyRun blowfly_loop(const BlowflyParams& p, int T, const BlowflyOptions& opt, Step&& step) {
    p.validate();
    if (T < 1) throw DomainError("blowfly: T must be at least 1");
    const int L = p.lag();
    const std::size_t total = static_cast<std::size_t>(L + 1 + opt.burnin + T);
    std::vector<double> n(total, opt.initial);
    BlowflyRun run;
    for (std::size_t t = static_cast<std::size_t>(L + 1); t < total; ++t) {
        double v = step(n[t - static_cast<std::size_t>(L)], n[t - 1]);
        if (v > opt.ceiling) {
            v = opt.ceiling;
            run.capped = true;
        }
        n[t] = v;
    }
    run.series.assign(n.end() - T, n.end());
    return run;
}

}  // namespace detail

/// Deterministic skeleton: disturbances at their unit means and counts replaced
/// by expectations, n_t = P n_{t-tau} exp(-n_{t-tau}/n0) + exp(-delta) n_{t-1}.
inline std::vector<double> blowfly_skeleton(const BlowflyParams& p, int T, const BlowflyOptions& opt = {}) {
    return detail::blowfly_loop(p, T, opt, [&](double lagged, double prev) {
               return blowfly_recruitment_mean(p, lagged) + std::exp(-p.delta) * prev;
           }).series;
}

inline BlowflyRun simulate_blowfly_run(const BlowflyParams& p, int T, Rng& rng, const BlowflyOptions& opt = {}) {
    return detail::blowfly_loop(p, T, opt, [&](double lagged, double prev) {
        const auto r = blowfly_recruitment_draw(p, lagged, rng);
        const auto s = blowfly_survival_draw(p, static_cast<std::int64_t>(prev), rng);
        return static_cast<double>(r + s);
    });
}

inline std::vector<std::int64_t> simulate_blowfly(const BlowflyParams& p, int T, Rng& rng,
                                                  const BlowflyOptions& opt = {}) {
    const auto run = simulate_blowfly_run(p, T, rng, opt);
    return {run.series.begin(), run.series.end()};
}

// ---------------------------------------------------------------------------
// Voles (dimensionless predator-prey model)

struct VolesParams {
    double r = 4.5;
    double e = 0.8;
    double g = 0.15;
    double h = 0.1;
    double a = 6.0;
    double delta = 0.05;
    double s = 1.25;
    double sigma = 0.5;
    double phi = 100.0;

    static VolesParams from(std::span<const double> rho) {
        if (rho.size() != 9) throw ShapeError("voles: expected 9 parameters");
        return {rho[0], rho[1], rho[2], rho[3], rho[4], rho[5], rho[6], rho[7], rho[8]};
    }
    std::vector<double> to_vector() const { return {r, e, g, h, a, delta, s, sigma, phi}; }

    void validate() const {
        if (!(r > 0 && e >= 0 && e < 1 && g >= 0 && h > 0 && a >= 0 && delta > 0 && s > 0 && sigma >= 0 && phi > 0))
            throw DomainError("voles: parameters outside their admissible ranges");
    }
};

inline const std::vector<std::string>& voles_names() {
    static const std::vector<std::string> names{"r", "e", "g", "h", "a", "delta", "s", "sigma", "phi"};
    return names;
}

struct VolesOptions {
    double dt = 1e-2;  // years
    double floor = 1e-6;
    double cap = 1e4;
    double n_init = 0.5;
    double p_init = 0.1;
    double burnin_years = 10.0;
    std::array<double, 2> offsets{0.45, 0.7};  // spring and autumn trapping within each year
};

struct VolesState {
    double n = 0.5;
    double p = 0.1;
};

/// One Euler-Maruyama step from time t; dW ~ N(0, dt) is the standard Brownian increment.
inline VolesState voles_step(const VolesParams& q, VolesState x, double t, double dt, double dW, double floor) {
    const double season = 1.0 - q.e * std::sin(2.0 * std::numbers::pi * t);
    const double n = x.n, p = x.p;
    const double dn = q.r * season * n - q.r * n * n - q.g * n * n / (n * n + q.h * q.h) - q.a * n * p / (n + q.delta);
    const double dp = q.s * season * p - q.s * p * p / n;
    return {std::max(n + dn * dt + q.sigma * n * dW, floor), std::max(p + dp * dt, floor)};
}

/// States at the requested times (nondecreasing, in years from t = 0).
inline std::vector<VolesState> integrate_voles(const VolesParams& q, VolesState x, std::span<const double> times,
                                               double dt, Rng* rng, const VolesOptions& opt = {}) {
    q.validate();
    if (!(dt > 0.0)) throw DomainError("voles: dt must be positive");
    std::vector<VolesState> out;
    out.reserve(times.size());
    long step = 0;
    const double sqdt = std::sqrt(dt);
    for (double target : times) {
        const long stop = std::lround(target / dt);
        for (; step < stop; ++step) {
            const double dW = (rng && q.sigma > 0.0) ? sqdt * std_normal(*rng) : 0.0;
            x = voles_step(q, x, double(step) * dt, dt, dW, opt.floor);
            if (!(x.n <= opt.cap) || !(x.p <= opt.cap))
                throw SimulationDiverged("voles: state exceeded cap at t = " + std::to_string(double(step + 1) * dt),
                                         q.to_vector());
        }
        out.push_back(x);
    }
    return out;
}

inline std::vector<double> voles_observation_times(int T, const VolesOptions& opt = {}) {
    std::vector<double> t(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i) t[static_cast<std::size_t>(i)] = opt.burnin_years + double(i / 2) + opt.offsets[static_cast<std::size_t>(i % 2)];
    return t;
}

/// Trapped counts d_t ~ Poisson(phi n_t) at T observation times.
inline std::vector<std::int64_t> simulate_voles(const VolesParams& q, int T, Rng& rng, const VolesOptions& opt = {}) {
    if (T < 1) throw DomainError("voles: T must be at least 1");
    const auto times = voles_observation_times(T, opt);
    const auto states = integrate_voles(q, {opt.n_init, opt.p_init}, times, opt.dt, &rng, opt);
    std::vector<std::int64_t> d(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) d[i] = poisson_draw(rng, q.phi * states[i].n);
    return d;
}

// ---------------------------------------------------------------------------
// Simulation models and batches

enum class ModelKind { blowfly, voles };

inline ModelKind model_kind_from(const std::string& s) {
    if (s == "blowfly") return ModelKind::blowfly;
    if (s == "voles") return ModelKind::voles;
    throw ConfigError("unknown simulator '" + s + "' (expected blowfly or voles)");
}
inline std::string to_string(ModelKind k) { return k == ModelKind::blowfly ? "blowfly" : "voles"; }

/// Stand-in priors (log scale centred on typical published parameter values).
inline std::vector<ParamPrior> default_prior(ModelKind k) {
    using D = PriorDist;
    if (k == ModelKind::blowfly)
        return {{"delta", D::lognormal, std::log(0.16), 0.5}, {"P", D::lognormal, std::log(6.5), 0.5},
                {"n0", D::lognormal, std::log(400.0), 0.5},   {"sigma_p2", D::lognormal, std::log(0.1), 0.5},
                {"tau", D::lognormal, std::log(14.0), 0.2},   {"sigma_d2", D::lognormal, std::log(0.1), 0.5}};
    return {{"r", D::lognormal, std::log(4.5), 0.15},   {"e", D::uniform, 0.6, 0.95},
            {"g", D::lognormal, std::log(0.15), 0.3},   {"h", D::lognormal, std::log(0.1), 0.3},
            {"a", D::lognormal, std::log(6.0), 0.2},    {"delta", D::lognormal, std::log(0.05), 0.3},
            {"s", D::lognormal, std::log(1.25), 0.2},   {"sigma", D::lognormal, std::log(0.5), 0.3},
            {"phi", D::lognormal, std::log(100.0), 0.3}};
}

inline int default_length(ModelKind k) { return k == ModelKind::blowfly ? 275 : 90; }

struct SimModel {
    ModelKind kind = ModelKind::blowfly;
    int T = 275;
    std::vector<ParamPrior> prior;
    BlowflyOptions blowfly;
    VolesOptions voles;

    SimModel() = default;
    SimModel(ModelKind k, std::vector<ParamPrior> pr, int length = 0)
        : kind(k), T(length > 0 ? length : default_length(k)), prior(std::move(pr)) {
        const auto& names = this->names();
        if (prior.size() != names.size())
            throw ConfigError(to_string(kind) + " prior must list " + std::to_string(names.size()) + " parameters");
        for (std::size_t j = 0; j < names.size(); ++j) {
            if (prior[j].name != names[j])
                throw ConfigError(to_string(kind) + " prior: parameter " + std::to_string(j + 1) + " must be '" +
                                  names[j] + "', found '" + prior[j].name + "'");
            prior[j].validate();
        }
    }

    const std::vector<std::string>& names() const { return kind == ModelKind::blowfly ? blowfly_names() : voles_names(); }
    std::size_t dim() const { return prior.size(); }

    std::vector<double> draw_prior(Rng& rng) const {
        std::vector<double> rho(prior.size());
        for (std::size_t j = 0; j < prior.size(); ++j) rho[j] = prior[j].draw(rng);
        return rho;
    }

    std::vector<double> simulate(std::span<const double> rho, Rng& rng, int length = 0) const {
        const int len = length > 0 ? length : T;
        std::vector<double> out;
        if (kind == ModelKind::blowfly) {
            out = simulate_blowfly_run(BlowflyParams::from(rho), len, rng, blowfly).series;
        } else {
            const auto d = simulate_voles(VolesParams::from(rho), len, rng, voles);
            out.assign(d.begin(), d.end());
        }
        return out;
    }
};

/// Pairs (rho_i, d_i): one row per data set.
struct SimBatch {
    Matrix rho;  // n x p
    Matrix d;    // n x T
    std::uint64_t seed = 0;
    long resampled = 0;  // prior draws replaced after simulator divergence

    Eigen::Index size() const { return rho.rows(); }
    int length() const { return static_cast<int>(d.cols()); }
};

inline void write_simbatch_csv(std::ostream& os, const SimBatch& b) {
    for (Eigen::Index j = 0; j < b.rho.cols(); ++j) os << (j ? "," : "") << "rho_" << j + 1;
    for (Eigen::Index t = 0; t < b.d.cols(); ++t) os << ",d_" << t + 1;
    os << '\n';
    for (Eigen::Index i = 0; i < b.size(); ++i) {
        for (Eigen::Index j = 0; j < b.rho.cols(); ++j) os << (j ? "," : "") << format_double(b.rho(i, j));
        for (Eigen::Index t = 0; t < b.d.cols(); ++t) os << ',' << format_double(b.d(i, t));
        os << '\n';
    }
}

inline SimBatch simbatch_from_table(const Table& t) {
    std::size_t p = 0;
    while (p < t.cols() && t.header[p].rfind("rho_", 0) == 0) ++p;
    if (p == 0 || p == t.cols()) throw DataError("SimBatch CSV: expected rho_1..rho_p followed by d_1..d_T");
    for (std::size_t c = p; c < t.cols(); ++c)
        if (t.header[c].rfind("d_", 0) != 0) throw DataError("SimBatch CSV: column '" + t.header[c] + "' is not d_t");
    SimBatch b;
    b.rho = t.matrix(0, p);
    b.d = t.matrix(p);
    return b;
}

/// Simulates n_total data sets under the prior; the first round(split * n_total)
/// form the training batch, the rest the test batch.
inline std::pair<SimBatch, SimBatch> generate_training(const SimModel& model, int n_total, double split,
                                                       std::uint64_t seed, int length = 0) {
    if (!(split > 0.0 && split < 1.0)) throw DomainError("generate_training: split must lie in (0,1)");
    if (n_total < 2) throw DomainError("generate_training: need at least two data sets");
    const int T = length > 0 ? length : model.T;
    const auto p = static_cast<Eigen::Index>(model.dim());
    Matrix rho(n_total, p), d(n_total, T);
    long resampled = 0;
    for (int i = 0; i < n_total; ++i) {
        Rng rng = make_rng(seed, static_cast<std::uint64_t>(i));
        for (;;) {
            const auto r = model.draw_prior(rng);
            try {
                const auto series = model.simulate(r, rng, T);
                for (Eigen::Index j = 0; j < p; ++j) rho(i, j) = r[static_cast<std::size_t>(j)];
                for (int t = 0; t < T; ++t) d(i, t) = series[static_cast<std::size_t>(t)];
                break;
            } catch (const SimulationDiverged&) {
                ++resampled;
            } catch (const DomainError&) {
                ++resampled;
            }
        }
    }
    const auto n_train = std::clamp<Eigen::Index>(std::lround(split * n_total), 1, n_total - 1);
    SimBatch train, test;
    train.rho = rho.topRows(n_train);
    train.d = d.topRows(n_train);
    test.rho = rho.bottomRows(n_total - n_train);
    test.d = d.bottomRows(n_total - n_train);
    train.seed = test.seed = seed;
    train.resampled = test.resampled = resampled;
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Marginal posterior regressors

struct LfiOptions {
    nn::CnnOptions cnn;
    nn::TrainConfig train;
    McmcConfig mcmc;
    PriorKind variant = PriorKind::horseshoe;
    KdeOptions kde;

    LfiOptions() {
        train.batch_size = 256;
        mcmc.draws = 500;
    }
};

struct ParamRegressor {
    std::string name;
    std::size_t index = 0;
    std::shared_ptr<const MarginModel> margin;
    std::shared_ptr<const nn::Network> net;
    PosteriorDraws draws;
    PredictiveModel model;
    int best_epoch = 0;
};

/// Regression of log rho_j on the simulated series: margin, CNN basis trained on
/// pseudo-responses, and the copula posterior of the output layer.
inline ParamRegressor lfi_fit(const SimBatch& train, std::size_t j, const std::string& name, const LfiOptions& opt,
                              std::uint64_t seed) {
    if (train.size() == 0) throw DomainError("lfi_fit: empty training batch");
    if (j >= static_cast<std::size_t>(train.rho.cols())) throw ShapeError("lfi_fit: parameter index out of range");
    std::vector<double> y(static_cast<std::size_t>(train.size()));
    for (Eigen::Index i = 0; i < train.size(); ++i) y[static_cast<std::size_t>(i)] = std::log(train.rho(i, static_cast<Eigen::Index>(j)));
    auto margin = std::make_shared<const MarginModel>(fit_kde(y, opt.kde));
    const auto zs = margin->to_pseudo(y);
    const Vector z = Eigen::Map<const Vector>(zs.data(), static_cast<Eigen::Index>(zs.size()));

    auto cfg = opt.train;
    cfg.seed = splitmix64(seed ^ 0x747261696eULL);
    auto net0 = nn::build_cnn(train.length(), splitmix64(seed ^ 0x6e6574ULL), opt.cnn);
    auto fit = nn::train(std::move(net0), train.d, z, cfg);
    auto net = std::make_shared<const nn::Network>(std::move(fit.net));
    const Matrix B = nn::extract_basis(*net, train.d);
    auto mc = opt.mcmc;
    mc.seed = splitmix64(seed ^ 0x6d636d63ULL);
    PosteriorDraws draws = run_mcmc_pseudo(z, B, opt.variant, mc);

    ParamRegressor r;
    r.name = name;
    r.index = j;
    r.margin = margin;
    r.net = net;
    r.model = PredictiveModel(margin, net, draws);
    r.draws = std::move(draws);
    r.best_epoch = fit.best_epoch;
    return r;
}

struct ParamEvaluation {
    std::string name;
    double mse = 0.0;
    double se = 0.0;
    double coverage = 0.0;
    double marginal_sup = 0.0;
};

/// Posterior-mean point estimates of log rho_j, central 95% interval coverage,
/// and the sup-distance between the average posterior CDF and the prior CDF.
inline ParamEvaluation eval_parameter(const ParamRegressor& reg, const ParamPrior& prior, const SimBatch& test) {
    const auto preds = reg.model.at_rows(test.d);
    const auto n = test.size();
    std::vector<double> sq(static_cast<std::size_t>(n));
    long covered = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& p = preds[static_cast<std::size_t>(i)];
        const double truth = std::log(test.rho(i, static_cast<Eigen::Index>(reg.index)));
        const double est = reg.model.mean(p);
        sq[static_cast<std::size_t>(i)] = (est - truth) * (est - truth);
        if (reg.model.quantile(p, 0.025) <= truth && truth <= reg.model.quantile(p, 0.975)) ++covered;
    }
    ParamEvaluation e;
    e.name = reg.name;
    e.mse = mean(sq);
    e.se = n > 1 ? std::sqrt(variance(sq) / double(n)) : 0.0;
    e.coverage = double(covered) / double(n);
    const auto grid = margin_grid(*reg.margin, 512);
    const auto avg = average_predictive_cdf(*reg.margin, preds, grid);
    for (std::size_t k = 0; k < grid.size(); ++k) e.marginal_sup = std::max(e.marginal_sup, std::abs(avg[k] - prior.log_cdf(grid[k])));
    return e;
}

inline std::vector<ParamEvaluation> eval_simulation(const std::vector<ParamRegressor>& regs,
                                                    const std::vector<ParamPrior>& prior, const SimBatch& test) {
    std::vector<ParamEvaluation> out;
    for (const auto& r : regs) out.push_back(eval_parameter(r, prior.at(r.index), test));
    return out;
}

inline nlohmann::json to_json(const std::vector<ParamEvaluation>& rows) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : rows)
        j.push_back({{"parameter", e.name}, {"mse", e.mse}, {"se", e.se}, {"coverage", e.coverage},
                     {"marginal_sup", e.marginal_sup}});
    return j;
}

// ---------------------------------------------------------------------------
// Scores

using Pair = std::array<double, 2>;

/// Energy score (1/m) sum ||X_i - y|| - 1/(2 m^2) sum_i sum_j ||X_i - X_j||.
inline double energy_score(std::span<const Pair> samples, const Pair& obs) {
    const std::size_t m = samples.size();
    if (m < 2) throw DomainError("energy_score: need at least two samples");
    auto dist = [](const Pair& a, const Pair& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); };
    double first = 0.0;
    for (const auto& x : samples) first += dist(x, obs);
    double second = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = i + 1; k < m; ++k) second += dist(samples[i], samples[k]);
    const double dm = static_cast<double>(m);
    return first / dm - second / (dm * dm);  // the double sum counts each unordered pair twice
}

/// Log of a product-Gaussian kernel density estimate at obs, bandwidth
/// sd_c * m^(-1/6) per coordinate (at least `min_bandwidth`).
inline double bivariate_kde_logpdf(std::span<const Pair> samples, const Pair& obs, double min_bandwidth = 0.5) {
    const std::size_t m = samples.size();
    if (m < 2) throw DomainError("bivariate KDE: need at least two samples");
    std::array<double, 2> h{};
    for (int c = 0; c < 2; ++c) {
        std::vector<double> v(m);
        for (std::size_t i = 0; i < m; ++i) v[i] = samples[i][static_cast<std::size_t>(c)];
        h[static_cast<std::size_t>(c)] = std::max(std::sqrt(variance(v)) * std::pow(double(m), -1.0 / 6.0), min_bandwidth);
    }
    std::vector<double> terms(m);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
        const double a = (obs[0] - samples[i][0]) / h[0], b = (obs[1] - samples[i][1]) / h[1];
        terms[i] = -0.5 * (a * a + b * b);
        top = std::max(top, terms[i]);
    }
    double s = 0.0;
    for (double t : terms) s += std::exp(t - top);
    return top + std::log(s) - std::log(double(m)) - 2.0 * kLogSqrt2Pi - std::log(h[0] * h[1]);
}

struct CompositeScores {
    double cls = 0.0;
    double ces = 0.0;          // average energy score
    double negated_ces = 0.0;  // higher is better
};

/// Composite scores over consecutive test pairs (d_t, d_{t+1}), t = K..T-2
/// (0-based), from m replicate series simulated at rho_hat.
inline CompositeScores composite_scores(const SimModel& model, std::span<const double> rho_hat,
                                        std::span<const double> observed, std::size_t K, int m, std::uint64_t seed) {
    const std::size_t T = observed.size();
    if (m < 2) throw DomainError("composite_scores: need at least two replicates");
    if (K + 2 > T) throw DomainError("composite_scores: test segment needs at least two points");
    std::vector<std::vector<double>> reps;
    reps.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        Rng rng = make_rng(seed, 0x73636f7265ULL + static_cast<std::uint64_t>(i));
        reps.push_back(model.simulate(rho_hat, rng, static_cast<int>(T)));
    }
    CompositeScores out;
    std::vector<Pair> pairs(static_cast<std::size_t>(m));
    const double count = static_cast<double>(T - K - 1);
    for (std::size_t t = K; t + 1 < T; ++t) {
        for (int i = 0; i < m; ++i) pairs[static_cast<std::size_t>(i)] = {reps[static_cast<std::size_t>(i)][t], reps[static_cast<std::size_t>(i)][t + 1]};
        const Pair obs{observed[t], observed[t + 1]};
        out.cls += bivariate_kde_logpdf(pairs, obs) / count;
        out.ces += energy_score(pairs, obs) / count;
    }
    out.negated_ces = -out.ces;
    return out;
}

/// Points of a training prefix: the first 80% of a series.
inline std::size_t training_cut(std::size_t T, double fraction = 0.8) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(T)));
}

/// Posterior mean of rho_j = exp(log rho_j) under a fitted regressor.
inline double posterior_mean_rho(const ParamRegressor& reg, const PointPrediction& p) {
    const auto grid = predictive_grid(*reg.margin, p);
    const auto dens = reg.model.density(p, grid);
    std::vector<double> ed(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) ed[k] = std::exp(grid[k]) * dens[k];
    return trapezoid(grid, ed) / trapezoid(grid, dens);
}

}  // namespace dnnc::lfi
