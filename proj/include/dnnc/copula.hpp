#pragma once

// Implicit Gaussian copula of a Bayesian linear output layer with shrinkage
// priors, its O(n) likelihood conditional on the coefficients, and the
// Metropolis-within-Gibbs sampler over (beta, theta).
//
// Throughout, v_j denotes the prior variance of beta_j, i.e. the diagonal of
// P(theta)^-1: lambda_j^2 for the horseshoe and tau^2 for ridge.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dnnc/error.hpp"
#include "dnnc/margin.hpp"
#include "dnnc/random.hpp"
#include "dnnc/stats.hpp"

namespace dnnc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class PriorKind { horseshoe, ridge };

inline std::string to_string(PriorKind k) { return k == PriorKind::horseshoe ? "horseshoe" : "ridge"; }
inline PriorKind prior_kind_from(const std::string& s) {
    if (s == "horseshoe") return PriorKind::horseshoe;
    if (s == "ridge") return PriorKind::ridge;
    throw ConfigError("unknown prior variant '" + s + "' (expected horseshoe or ridge)");
}

/// Rate b of the scale-dependent ridge prior tau ~ Exponential(b); b = log 2
/// puts the prior median of tau at 1.
inline constexpr double kRidgeScaleRate = 0.69314718055994530942;

/// Copula parameters theta.
///
/// Horseshoe: beta_j | lambda_j ~ N(0, lambda_j^2), lambda_j | tau ~ C+(0, tau),
/// tau ~ C+(0, 1), augmented as lambda_j^2 | nu_j ~ IG(1/2, 1/nu_j),
/// nu_j | tau^2 ~ IG(1/2, 1/tau^2), tau^2 | xi ~ IG(1/2, 1/xi), xi ~ IG(1/2, 1).
///
/// Ridge: beta_j | tau^2 ~ N(0, tau^2), with tau = sqrt(tau^2) ~ Exponential(b).
struct ShrinkageState {
    PriorKind kind = PriorKind::ridge;
    Vector lambda;  // horseshoe local scales
    Vector nu;      // horseshoe auxiliaries
    double tau = 1.0;
    double xi = 1.0;
    double tau2 = 1.0;  // ridge variance
    int q = 0;

    static ShrinkageState horseshoe(int q) {
        ShrinkageState s;
        s.kind = PriorKind::horseshoe;
        s.q = q;
        s.lambda = Vector::Ones(q);
        s.nu = Vector::Ones(q);
        return s;
    }
    static ShrinkageState ridge(int q, double tau2 = 1.0) {
        ShrinkageState s;
        s.kind = PriorKind::ridge;
        s.q = q;
        s.tau2 = tau2;
        return s;
    }
    static ShrinkageState initial(PriorKind kind, int q) { return kind == PriorKind::horseshoe ? horseshoe(q) : ridge(q); }

    double prior_variance(int j) const { return kind == PriorKind::horseshoe ? lambda(j) * lambda(j) : tau2; }

    /// Diagonal of P(theta)^-1.
    Vector prior_variance() const {
        return kind == PriorKind::horseshoe ? Vector(lambda.array().square()) : Vector::Constant(q, tau2);
    }

    /// Diagonal of P(theta).
    Vector precision() const { return prior_variance().cwiseInverse(); }

    bool valid() const {
        if (kind == PriorKind::ridge) return tau2 > 0.0 && std::isfinite(tau2);
        return lambda.size() == q && nu.size() == q && (lambda.array() > 0.0).all() && (nu.array() > 0.0).all() &&
               lambda.allFinite() && nu.allFinite() && tau > 0.0 && xi > 0.0 && std::isfinite(tau) &&
               std::isfinite(xi);
    }
};

/// s = (1 + psi' P^-1 psi)^(-1/2), in O(q).
inline double scaling(std::span<const double> psi, const ShrinkageState& theta) {
    if (static_cast<int>(psi.size()) != theta.q) throw ShapeError("scaling: basis length does not match theta");
    double quad = 0.0;
    for (int j = 0; j < theta.q; ++j) quad += psi[static_cast<std::size_t>(j)] * psi[static_cast<std::size_t>(j)] * theta.prior_variance(j);
    return 1.0 / std::sqrt(1.0 + quad);
}

/// Scaling factors for every row of B.
inline Vector scaling_all(const Matrix& B, const Vector& prior_var) {
    return ((B.array().square().matrix() * prior_var).array() + 1.0).rsqrt();
}

inline constexpr Eigen::Index kOracleLimit = 64;

/// R = S (I + B P^-1 B') S; only for small n (never used by the sampler).
inline Matrix corr_matrix(const Matrix& B, const ShrinkageState& theta, Eigen::Index limit = kOracleLimit) {
    if (B.rows() > limit)
        throw DomainError("corr_matrix: n = " + std::to_string(B.rows()) + " exceeds the oracle limit of " +
                          std::to_string(limit));
    if (B.cols() != theta.q) throw ShapeError("corr_matrix: basis width does not match theta");
    const Vector v = theta.prior_variance();
    Matrix K = B * v.asDiagonal() * B.transpose();
    K.diagonal().array() += 1.0;
    const Vector s = K.diagonal().array().rsqrt();
    Matrix R = s.asDiagonal() * K * s.asDiagonal();
    R = 0.5 * (R + R.transpose()).eval();
    return R;
}

/// log c(u | x, theta) = log phi_n(z; 0, R) - sum log phi_1(z_i), z_i = Phi^-1(u_i).
inline double copula_logdensity(std::span<const double> u, const Matrix& B, const ShrinkageState& theta,
                                Eigen::Index limit = kOracleLimit) {
    if (static_cast<Eigen::Index>(u.size()) != B.rows()) throw ShapeError("copula_logdensity: u and B disagree");
    const Matrix R = corr_matrix(B, theta, limit);
    Vector z(B.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = norm_quantile(u[static_cast<std::size_t>(i)]);
    Eigen::LLT<Matrix> llt(R);
    if (llt.info() != Eigen::Success)
        throw NumericalError("copula_logdensity: correlation matrix is numerically singular; "
                             "add a small jitter to its diagonal or reduce the basis scale");
    const Matrix L = llt.matrixL();
    const Vector w = llt.matrixL().solve(z);
    const double logdet = 2.0 * L.diagonal().array().log().sum();
    double out = -0.5 * w.squaredNorm() - 0.5 * logdet - static_cast<double>(z.size()) * kLogSqrt2Pi;
    for (Eigen::Index i = 0; i < z.size(); ++i) out -= norm_logpdf(z(i));
    return out;
}

/// log p(y | x, beta, theta) in O(n q):
/// sum_i log phi((z_i - s_i psi_i'beta)/s_i) - log s_i + log p_Y(y_i) - log phi(z_i).
inline double cond_loglik(std::span<const double> y, const Matrix& B, const Vector& beta,
                          const ShrinkageState& theta, const MarginModel& margin) {
    if (static_cast<Eigen::Index>(y.size()) != B.rows() || B.cols() != beta.size() || beta.size() != theta.q)
        throw ShapeError("cond_loglik: dimensions disagree");
    const Vector s = scaling_all(B, theta.prior_variance());
    const Vector fit = B * beta;
    double out = 0.0;
    for (Eigen::Index i = 0; i < B.rows(); ++i) {
        const double yi = y[static_cast<std::size_t>(i)];
        const double z = margin.to_pseudo(yi);
        out += norm_logpdf((z - s(i) * fit(i)) / s(i)) - std::log(s(i)) + margin.log_pdf(yi) - norm_logpdf(z);
    }
    return out;
}

namespace detail {

/// Draw from N(Q^-1 b, Q^-1) through the Cholesky factor of Q.
inline Vector gaussian_from_precision(Matrix Q, const Vector& b, Rng& rng) {
    const Eigen::Index q = Q.rows();
    Eigen::LLT<Matrix> llt(Q);
    if (llt.info() != Eigen::Success) {
        Q.diagonal().array() += 1e-10 * Q.trace() / static_cast<double>(q);
        llt.compute(Q);
        if (llt.info() != Eigen::Success)
            throw NumericalError("sample_beta: posterior precision is not positive definite after jitter");
    }
    const Vector mean = llt.solve(b);
    Vector eps(q);
    for (Eigen::Index j = 0; j < q; ++j) eps(j) = std_normal(rng);
    return mean + llt.matrixU().solve(eps);
}

}  // namespace detail

/// Exact draw of beta | z, theta: precision B'B + P(theta), mean Q^-1 B' S^-1 z.
/// `gram` is B'B, precomputed by the caller.
inline Vector sample_beta(const Vector& z, const Matrix& B, const Matrix& gram, const ShrinkageState& theta,
                          Rng& rng) {
    const Vector v = theta.prior_variance();
    const Vector s = scaling_all(B, v);
    Matrix Q = gram;
    Q.diagonal() += v.cwiseInverse();
    const Vector rhs = B.transpose() * z.cwiseQuotient(s);
    return detail::gaussian_from_precision(std::move(Q), rhs, rng);
}

inline Vector sample_beta(const Vector& z, const Matrix& B, const ShrinkageState& theta, Rng& rng) {
    if (z.size() != B.rows() || B.cols() != theta.q) throw ShapeError("sample_beta: dimensions disagree");
    return sample_beta(z, B, Matrix(B.transpose() * B), theta, rng);
}

/// Running state of the pseudo-response likelihood prod_i N(z_i; s_i m_i, s_i^2)
/// with m = B beta and s_i = (1 + a_i)^(-1/2), a_i = sum_j B_ij^2 v_j. Scores a
/// single prior variance change in O(#rows where B_ij != 0) once the column is
/// opened with begin_column.
class PseudoLikelihood {
public:
    PseudoLikelihood(const Vector& z, const Matrix& B) : z_(z), sq_(B.array().square()) {
        if (z.size() != B.rows()) throw ShapeError("pseudo likelihood: z and B disagree");
        nonzero_.resize(static_cast<std::size_t>(B.cols()));
        for (Eigen::Index j = 0; j < B.cols(); ++j)
            for (Eigen::Index i = 0; i < B.rows(); ++i)
                if (sq_(i, j) != 0.0) nonzero_[static_cast<std::size_t>(j)].push_back(i);
        fit_ = Vector::Zero(z.size());
        v_ = Vector::Zero(B.cols());
        rest_ = Vector::Zero(z.size());
    }

    /// Resets m = B beta and the prior variances.
    void reset(const Matrix& B, const Vector& beta, const Vector& prior_var) {
        if (prior_var.size() != sq_.cols()) throw ShapeError("pseudo likelihood: prior variance length");
        fit_ = B * beta;
        v_ = prior_var;
    }

    static double row_term(double z, double m, double a) {
        const double r = z * std::sqrt(1.0 + a) - m;
        return 0.5 * std::log1p(a) - 0.5 * r * r;
    }

    /// Caches sum_{k != j} B_ik^2 v_k for the rows touched by column j. Summed
    /// directly rather than by subtraction, since v_j may exceed the rest by
    /// many orders of magnitude.
    void begin_column(int j) {
        open_ = j;
        for (Eigen::Index i : nonzero_[static_cast<std::size_t>(j)]) {
            double a = 0.0;
            for (Eigen::Index k = 0; k < sq_.cols(); ++k)
                if (k != j) a += sq_(i, k) * v_(k);
            rest_(i) = a;
        }
    }

    /// Log-likelihood as a function of v_j, up to terms free of v_j.
    double column_term(int j, double vj) const {
        if (j != open_) throw DomainError("pseudo likelihood: column not opened");
        double d = 0.0;
        for (Eigen::Index i : nonzero_[static_cast<std::size_t>(j)]) d += row_term(z_(i), fit_(i), rest_(i) + sq_(i, j) * vj);
        return std::isfinite(d) ? d : -std::numeric_limits<double>::infinity();
    }

    void commit_column(int j, double vj) {
        v_(j) = vj;
        open_ = -1;
    }

    /// Log-likelihood (up to a constant) when every v_j equals `v`; rows have
    /// a_i = v * ||psi_i||^2.
    double total_common(double v) const {
        double out = 0.0;
        for (Eigen::Index i = 0; i < z_.size(); ++i) out += row_term(z_(i), fit_(i), v * row_norm_sq(i));
        return std::isfinite(out) ? out : -std::numeric_limits<double>::infinity();
    }

    double row_norm_sq(Eigen::Index i) const { return sq_.row(i).sum(); }

private:
    Vector z_;
    Matrix sq_;
    std::vector<std::vector<Eigen::Index>> nonzero_;
    Vector fit_, v_, rest_;
    int open_ = -1;
};

namespace detail {

/// Univariate slice sampler (stepping out, then shrinkage) on x in [lo, hi].
template <class LogDensity>
double slice_sample(double x0, LogDensity&& logp, Rng& rng, double width, long& evals, double lo = -700.0,
                    double hi = 700.0) {
    const double f0 = logp(x0);
    ++evals;
    const double level = f0 + std::log(uniform_open(rng));
    double left = x0 - width * uniform01(rng);
    double right = left + width;
    constexpr int kMaxSteps = 50;
    for (int k = 0; k < kMaxSteps && left > lo && logp(left) > level; ++k) {
        ++evals;
        left -= width;
    }
    for (int k = 0; k < kMaxSteps && right < hi && logp(right) > level; ++k) {
        ++evals;
        right += width;
    }
    left = std::max(left, lo);
    right = std::min(right, hi);
    for (;;) {
        const double x1 = left + (right - left) * uniform01(rng);
        const double f1 = logp(x1);
        ++evals;
        if (f1 > level) return x1;
        if (x1 < x0)
            left = x1;
        else
            right = x1;
        if (right - left < 1e-14) return x0;
    }
}

inline double floor_positive(double v) { return std::max(v, std::numeric_limits<double>::min()); }

}  // namespace detail

/// Number of log-density evaluations spent by the slice steps, for diagnostics.
struct ThetaStepStats {
    long density_evals = 0;
};

/// theta | beta (and, when `lik` is given, the pseudo-responses). Without data
/// this is the conditionally conjugate prior kernel: closed-form inverse-gamma
/// updates for the horseshoe, a slice step on log tau^2 for ridge. With data the
/// scaling factors s_i depend on theta, so lambda_j^2 (horseshoe) and tau^2
/// (ridge) are slice-sampled from their full conditionals instead.
inline ShrinkageState sample_theta(const Vector& beta, ShrinkageState theta, Rng& rng,
                                   PseudoLikelihood* lik = nullptr, ThetaStepStats* stats = nullptr) {
    if (beta.size() != theta.q) throw ShapeError("sample_theta: beta length does not match theta");
    long evals = 0;
    if (theta.kind == PriorKind::horseshoe) {
        const double inv_tau2 = 1.0 / (theta.tau * theta.tau);
        for (int j = 0; j < theta.q; ++j) {
            const double rate = 1.0 / theta.nu(j) + 0.5 * beta(j) * beta(j);
            double lam2 = theta.lambda(j) * theta.lambda(j);
            if (lik == nullptr) {
                lam2 = detail::floor_positive(inv_gamma_draw(rng, 1.0, rate));
            } else {
                lik->begin_column(j);
                // log density of x = log lambda^2: IG(1, rate) prior-conditional, Jacobian, likelihood
                auto logp = [&](double x) {
                    const double v = std::exp(x);
                    return -x - rate / v + lik->column_term(j, v);
                };
                const double x = detail::slice_sample(std::log(lam2), logp, rng, 2.0, evals);
                lam2 = detail::floor_positive(std::exp(x));
                lik->commit_column(j, lam2);
            }
            theta.lambda(j) = std::sqrt(lam2);
            theta.nu(j) = detail::floor_positive(inv_gamma_draw(rng, 1.0, 1.0 / lam2 + inv_tau2));
        }
        const double rate = theta.nu.cwiseInverse().sum() + 1.0 / theta.xi;
        const double tau2 = detail::floor_positive(inv_gamma_draw(rng, 0.5 * (theta.q + 1), rate));
        theta.tau = std::sqrt(tau2);
        theta.xi = detail::floor_positive(inv_gamma_draw(rng, 1.0, 1.0 + 1.0 / tau2));
    } else {
        const double bsq = beta.squaredNorm();
        const double q = static_cast<double>(theta.q);
        // log density of x = log tau^2: scale-dependent prior, Jacobian, N(beta; 0, tau^2 I), likelihood
        auto logp = [&](double x) {
            double out = -0.5 * x - kRidgeScaleRate * std::exp(0.5 * x) + x - 0.5 * q * x - 0.5 * bsq * std::exp(-x);
            if (lik) out += lik->total_common(std::exp(x));
            return out;
        };
        const double x = detail::slice_sample(std::log(theta.tau2), logp, rng, 2.0, evals);
        theta.tau2 = detail::floor_positive(std::exp(x));
    }
    if (stats) stats->density_evals += evals;
    return theta;
}

struct McmcConfig {
    int burnin = 1000;
    int draws = 1000;
    int thin = 1;
    std::uint64_t seed = 0;
};

struct ChainDiagnostics {
    double mean_density_evals = 0.0;  // slice evaluations per sweep
    double ess_beta_min = 0.0;
    double ess_beta_median = 0.0;
};

/// Retained draws of (beta, theta).
struct PosteriorDraws {
    PriorKind kind = PriorKind::ridge;
    Matrix beta;  // J x q
    std::vector<ShrinkageState> theta;
    Vector beta_mean;
    ChainDiagnostics diagnostics;
    McmcConfig config;

    Eigen::Index size() const { return beta.rows(); }
    Eigen::Index dim() const { return beta.cols(); }

    /// J x q matrix of prior variances diag(P(theta^[j])^-1).
    Matrix prior_variances() const {
        Matrix V(static_cast<Eigen::Index>(theta.size()), dim());
        for (std::size_t j = 0; j < theta.size(); ++j) V.row(static_cast<Eigen::Index>(j)) = theta[j].prior_variance().transpose();
        return V;
    }
};

/// Gibbs sampler over (beta, theta) given pseudo-responses z and basis B.
inline PosteriorDraws run_mcmc_pseudo(const Vector& z, const Matrix& B, PriorKind kind, const McmcConfig& cfg) {
    if (z.size() != B.rows()) throw ShapeError("run_mcmc: z and B disagree");
    if (cfg.draws < 1 || cfg.burnin < 0 || cfg.thin < 1) throw DomainError("run_mcmc: invalid chain lengths");
    const auto q = static_cast<int>(B.cols());
    Rng rng = make_rng(cfg.seed, 0x6d636d63);
    const Matrix gram = B.transpose() * B;

    Matrix ridge = gram;
    ridge.diagonal().array() += 1.0;
    Vector beta = ridge.llt().solve(B.transpose() * z);
    ShrinkageState theta = ShrinkageState::initial(kind, q);
    PseudoLikelihood lik(z, B);

    PosteriorDraws out;
    out.kind = kind;
    out.config = cfg;
    out.beta.resize(cfg.draws, q);
    out.theta.reserve(static_cast<std::size_t>(cfg.draws));
    ThetaStepStats stats;
    const long total = static_cast<long>(cfg.burnin) + static_cast<long>(cfg.draws) * cfg.thin;
    int kept = 0;
    for (long it = 0; it < total; ++it) {
        beta = sample_beta(z, B, gram, theta, rng);
        lik.reset(B, beta, theta.prior_variance());
        theta = sample_theta(beta, std::move(theta), rng, &lik, &stats);
        if (it >= cfg.burnin && (it - cfg.burnin) % cfg.thin == cfg.thin - 1) {
            out.beta.row(kept++) = beta.transpose();
            out.theta.push_back(theta);
        }
    }
    out.beta_mean = out.beta.colwise().mean().transpose();
    out.diagnostics.mean_density_evals = static_cast<double>(stats.density_evals) / static_cast<double>(total);
    std::vector<double> ess;
    for (int j = 0; j < q; ++j) {
        std::vector<double> col(out.beta.col(j).data(), out.beta.col(j).data() + out.beta.rows());
        ess.push_back(effective_sample_size(col));
    }
    if (!ess.empty()) {
        std::sort(ess.begin(), ess.end());
        out.diagnostics.ess_beta_min = ess.front();
        out.diagnostics.ess_beta_median = ess[ess.size() / 2];
    }
    return out;
}

/// Step 3 of the estimator: posterior of (beta, theta) given the responses.
inline PosteriorDraws run_mcmc(std::span<const double> y, const Matrix& B, PriorKind kind, const MarginModel& margin,
                               const McmcConfig& cfg) {
    const auto z = margin.to_pseudo(y);
    return run_mcmc_pseudo(Eigen::Map<const Vector>(z.data(), static_cast<Eigen::Index>(z.size())), B, kind, cfg);
}

// ---------------------------------------------------------------------------
// Serialization: one CSV row per draw (beta, then theta) plus a JSON header.

inline void write_draws_csv(std::ostream& os, const PosteriorDraws& d) {
    const Eigen::Index q = d.dim();
    for (Eigen::Index j = 0; j < q; ++j) os << (j ? "," : "") << "beta_" << j + 1;
    if (d.kind == PriorKind::horseshoe) {
        for (Eigen::Index j = 0; j < q; ++j) os << ",lambda_" << j + 1;
        for (Eigen::Index j = 0; j < q; ++j) os << ",nu_" << j + 1;
        os << ",tau,xi\n";
    } else {
        os << ",tau2\n";
    }
    char buf[32];
    auto put = [&](double v, bool first = false) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        if (!first) os << ',';
        os << buf;
    };
    for (Eigen::Index r = 0; r < d.size(); ++r) {
        for (Eigen::Index j = 0; j < q; ++j) put(d.beta(r, j), j == 0);
        const auto& t = d.theta[static_cast<std::size_t>(r)];
        if (d.kind == PriorKind::horseshoe) {
            for (Eigen::Index j = 0; j < q; ++j) put(t.lambda(j));
            for (Eigen::Index j = 0; j < q; ++j) put(t.nu(j));
            put(t.tau);
            put(t.xi);
        } else {
            put(t.tau2);
        }
        os << '\n';
    }
}

inline nlohmann::json draws_header(const PosteriorDraws& d) {
    return {{"format", "dnnc-draws"},
            {"version", 1},
            {"variant", to_string(d.kind)},
            {"q", d.dim()},
            {"draws", d.size()},
            {"seed", d.config.seed},
            {"burnin", d.config.burnin},
            {"thin", d.config.thin},
            {"diagnostics",
             {{"mean_density_evals", d.diagnostics.mean_density_evals},
              {"ess_beta_min", d.diagnostics.ess_beta_min},
              {"ess_beta_median", d.diagnostics.ess_beta_median}}}};
}

/// Rebuilds draws from the JSON header and the parsed CSV rows (header removed).
inline PosteriorDraws draws_from_table(const nlohmann::json& header, const std::vector<std::vector<double>>& rows) {
    if (header.value("format", "") != "dnnc-draws") throw DataError("not a dnnc-draws header");
    PosteriorDraws d;
    d.kind = prior_kind_from(header.at("variant"));
    const int q = header.at("q");
    d.config.seed = header.at("seed");
    d.config.burnin = header.at("burnin");
    d.config.thin = header.at("thin");
    d.config.draws = static_cast<int>(rows.size());
    const std::size_t width = d.kind == PriorKind::horseshoe ? static_cast<std::size_t>(3 * q + 2) : static_cast<std::size_t>(q + 1);
    d.beta.resize(static_cast<Eigen::Index>(rows.size()), q);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != width) throw DataError("draws CSV: row " + std::to_string(r + 2) + " has wrong width");
        ShrinkageState t = ShrinkageState::initial(d.kind, q);
        for (int j = 0; j < q; ++j) d.beta(static_cast<Eigen::Index>(r), j) = rows[r][static_cast<std::size_t>(j)];
        if (d.kind == PriorKind::horseshoe) {
            for (int j = 0; j < q; ++j) t.lambda(j) = rows[r][static_cast<std::size_t>(q + j)];
            for (int j = 0; j < q; ++j) t.nu(j) = rows[r][static_cast<std::size_t>(2 * q + j)];
            t.tau = rows[r][static_cast<std::size_t>(3 * q)];
            t.xi = rows[r][static_cast<std::size_t>(3 * q + 1)];
        } else {
            t.tau2 = rows[r][static_cast<std::size_t>(q)];
        }
        d.theta.push_back(std::move(t));
    }
    d.beta_mean = d.beta.colwise().mean().transpose();
    if (header.contains("diagnostics")) {
        const auto& g = header.at("diagnostics");
        d.diagnostics.mean_density_evals = g.value("mean_density_evals", 0.0);
        d.diagnostics.ess_beta_min = g.value("ess_beta_min", 0.0);
        d.diagnostics.ess_beta_median = g.value("ess_beta_median", 0.0);
    }
    return d;
}

}  // namespace dnnc
