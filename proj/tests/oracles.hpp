#pragma once

// Dense reference computations used as independent checks of the recursive code.

#include "dfm/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using dfm::Index;
using dfm::Matrix;
using dfm::Vector;

inline Matrix randn(std::mt19937_64& g, Index r, Index c) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (Index j = 0; j < c; ++j)
        for (Index i = 0; i < r; ++i) m(i, j) = n(g);
    return m;
}

inline double unif(std::mt19937_64& g, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(g);
}

// Random stable VAR(1) state space instance with loadings, noise variances and data.
struct Instance {
    dfm::DynamicParams params;
    dfm::Panel centered;
};

inline Instance random_instance(std::mt19937_64& g, Index T, Index N, Index r, double missing_prob = 0.0) {
    Instance in;
    auto& p = in.params;
    p.base.lambda = randn(g, N, r);
    p.base.sigma2 = Vector(N);
    for (Index i = 0; i < N; ++i) p.base.sigma2(i) = unif(g, 0.3, 1.5);
    p.base.alpha = Vector::Zero(N);
    Matrix a = randn(g, r, r);
    const double rad = dfm::spectral_radius(a);
    p.a_mat = a * (unif(g, 0.2, 0.9) / std::max(rad, 1e-8));
    Matrix h = randn(g, r, r).triangularView<Eigen::Lower>();
    for (Index j = 0; j < r; ++j) h(j, j) = std::abs(h(j, j)) + 0.3;
    p.h_mat = h;

    Matrix f(T, r);
    Vector prev = Vector::Zero(r);
    for (Index t = 0; t < T; ++t) {
        prev = p.a_mat * prev + p.h_mat * randn(g, r, 1);
        f.row(t) = prev.transpose();
    }
    Matrix x = f * p.base.lambda.transpose();
    for (Index t = 0; t < T; ++t)
        for (Index i = 0; i < N; ++i) x(t, i) += std::sqrt(p.base.sigma2(i)) * randn(g, 1, 1)(0, 0);
    std::bernoulli_distribution miss(missing_prob);
    for (Index t = 0; t < T; ++t)
        for (Index i = 0; i < N; ++i)
            if (missing_prob > 0.0 && miss(g)) x(t, i) = std::numeric_limits<double>::quiet_NaN();
    // Keep at least one observation per date so every test exercises a proper update.
    for (Index t = 0; t < T; ++t)
        if (!x.row(t).array().isFinite().any()) x(t, 0) = 0.5;
    in.centered = dfm::Panel::from_matrix(x);
    return in;
}

// Joint covariance of (F_1..F_T) stacked time-major, given Var(F_1).
inline Matrix state_cov_from_first(const Matrix& a, const Matrix& q, const Matrix& var1, Index T) {
    const Index r = a.rows();
    std::vector<Matrix> var(T);
    var[0] = var1;
    for (Index t = 1; t < T; ++t) var[t] = a * var[t - 1] * a.transpose() + q;
    Matrix omega(r * T, r * T);
    for (Index t = 0; t < T; ++t) {
        Matrix apow = Matrix::Identity(r, r);
        for (Index s = t; s < T; ++s) {
            const Matrix c = apow * var[t];  // Cov(F_s, F_t)
            omega.block(s * r, t * r, r, r) = c;
            omega.block(t * r, s * r, r, r) = c.transpose();
            apow = a * apow;
        }
    }
    return omega;
}

// Stationary variance by fixed-point iteration (independent of the Kronecker solve).
inline Matrix stationary_cov_iter(const Matrix& a, const Matrix& q) {
    Matrix g = q;
    for (int k = 0; k < 20000; ++k) {
        const Matrix next = a * g * a.transpose() + q;
        if ((next - g).cwiseAbs().maxCoeff() < 1e-15 * (1.0 + g.cwiseAbs().maxCoeff())) return next;
        g = next;
    }
    return g;
}

inline Matrix state_cov_init(const Matrix& a, const Matrix& q, const Matrix& p00, Index T) {
    return state_cov_from_first(a, q, a * p00 * a.transpose() + q, T);
}

struct DenseSmooth {
    Matrix mean;                 // T x r
    std::vector<Matrix> cov;     // T blocks
    std::vector<Matrix> lag;     // lag[k] = Cov(F_{k+1}, F_k)
    Matrix full_cov;             // rT x rT Schur complement
    double loglik = 0.0;
};

// Conditional moments of the stacked states given observed cells, by explicit projection.
inline DenseSmooth dense_smooth(const dfm::Panel& xc, const dfm::DynamicParams& p, const Matrix& omega_f) {
    const Index T = xc.T(), N = xc.N(), r = p.r();
    std::vector<Index> obs_t, obs_i;
    for (Index t = 0; t < T; ++t)
        for (Index i = 0; i < N; ++i)
            if (xc.mask(t, i)) {
                obs_t.push_back(t);
                obs_i.push_back(i);
            }
    const Index M = static_cast<Index>(obs_t.size());
    Matrix z = Matrix::Zero(M, r * T);  // x = Z F + e
    Vector x(M);
    Matrix sig = Matrix::Zero(M, M);
    for (Index k = 0; k < M; ++k) {
        z.block(k, obs_t[k] * r, 1, r) = p.base.lambda.row(obs_i[k]);
        x(k) = xc.values(obs_t[k], obs_i[k]);
        sig(k, k) = p.base.sigma2(obs_i[k]);
    }
    const Matrix omega_x = z * omega_f * z.transpose() + sig;
    const Matrix omega_fx = omega_f * z.transpose();
    Eigen::LDLT<Matrix> ldlt(omega_x);
    const Vector mean = omega_fx * ldlt.solve(x);
    DenseSmooth out;
    out.full_cov = omega_f - omega_fx * ldlt.solve(omega_fx.transpose());
    out.mean.resize(T, r);
    for (Index t = 0; t < T; ++t) {
        out.mean.row(t) = mean.segment(t * r, r).transpose();
        out.cov.push_back(out.full_cov.block(t * r, t * r, r, r));
        if (t + 1 < T) out.lag.push_back(out.full_cov.block((t + 1) * r, t * r, r, r));
    }
    const double logdet = ldlt.vectorD().array().log().sum();
    out.loglik = -0.5 * (static_cast<double>(M) * std::log(2.0 * std::numbers::pi) + logdet + x.dot(ldlt.solve(x)));
    return out;
}

// Inverse of the stationary AR(1) covariance omega2/(1-a^2) a^{|s-t|}, by dense inversion.
inline Matrix ar1_dense_precision(Index T, double alpha, double omega2) {
    Matrix c(T, T);
    for (Index s = 0; s < T; ++s)
        for (Index t = 0; t < T; ++t)
            c(s, t) = omega2 / (1.0 - alpha * alpha) * std::pow(alpha, static_cast<double>(std::abs(s - t)));
    return c.inverse();
}

// Scalar steady-state predicted variance of x_t = l F_t + e_t, F_t = a F_{t-1} + h u_t.
inline double riccati_closed_form(double a, double h, double l, double s2) {
    const double b = l * l / s2;
    const double c = h * h * b - 1.0 + a * a;
    return (c + std::sqrt(c * c + 4.0 * h * h * b)) / (2.0 * b);
}

// Minimum total squared error over all column permutations and sign flips.
inline double brute_force_alignment_error(const Matrix& est, const Matrix& truth) {
    const Index r = truth.cols();
    std::vector<Index> perm(r);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        for (unsigned mask = 0; mask < (1u << r); ++mask) {
            double err = 0.0;
            for (Index j = 0; j < r; ++j) {
                const double s = (mask >> j) & 1u ? -1.0 : 1.0;
                err += (s * est.col(perm[j]) - truth.col(j)).squaredNorm();
            }
            best = std::min(best, err);
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

// Bartlett long-run variance of the rows g_t, by explicit double loop.
inline Matrix bartlett_lrv_loops(const Matrix& g, Index m) {
    const Index T = g.rows(), k = g.cols();
    Matrix s = Matrix::Zero(k, k);
    for (Index t = 0; t < T; ++t)
        for (Index u = 0; u < T; ++u) {
            const Index lag = std::abs(t - u);
            if (lag > m) continue;
            const double w = 1.0 - static_cast<double>(lag) / static_cast<double>(m + 1);
            s += w * g.row(t).transpose() * g.row(u);
        }
    return s / static_cast<double>(T);
}

inline double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace oracle
