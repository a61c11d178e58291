#include "dfm/static_qml.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dfm {

namespace {

Matrix require_complete(const Panel& centered, const char* who) {
    if (!centered.complete()) throw Error(std::string(who) + ": panel has missing cells");
    return centered.values;
}

Index apply_floor(Vector& sigma2, const Vector& floor, const char* who) {
    Index n = 0;
    for (Index i = 0; i < sigma2.size(); ++i) {
        if (!(sigma2(i) >= floor(i))) {
            sigma2(i) = floor(i);
            ++n;
        }
    }
    if (n > 0) warn(std::string(who) + ": " + std::to_string(n) + " idiosyncratic variance(s) clamped at floor");
    return n;
}

}  // namespace

Vector variance_floor(const Matrix& centered, double fraction) {
    Vector v = centered.array().square().colwise().mean().transpose();
    for (Index i = 0; i < v.size(); ++i) v(i) = v(i) > 0.0 ? fraction * v(i) : 1e-300;
    return v;
}

double static_loglik(const Matrix& xc, const StaticParams& p) {
    const Index T = xc.rows(), N = xc.cols(), r = p.r();
    const Vector w = p.sigma2.cwiseInverse();
    const Matrix wl = w.asDiagonal() * p.lambda;
    const Matrix core = Matrix::Identity(r, r) + p.lambda.transpose() * wl;
    Eigen::LLT<Matrix> llt(core);
    const double logdet = p.sigma2.array().log().sum() + 2.0 * Vector(llt.matrixLLT().diagonal()).array().log().sum();
    const Matrix y = xc * wl;  // T x r
    const double quad_diag = (xc.array().square().rowwise() * w.transpose().array()).sum();
    const double quad_corr = (y.transpose() * y).cwiseProduct(llt.solve(Matrix::Identity(r, r))).sum();
    const double td = static_cast<double>(T);
    const double ll = -0.5 * td * static_cast<double>(N) * std::log(2.0 * std::numbers::pi) - 0.5 * td * logdet -
                      0.5 * (quad_diag - quad_corr);
    if (!std::isfinite(ll)) throw Error("static log-likelihood is not finite");
    return ll;
}

StaticEmStep static_em_step(const Matrix& xc, const StaticParams& p, const Vector& floor) {
    const Index T = xc.rows(), r = p.r();
    const double td = static_cast<double>(T);
    const Vector w = p.sigma2.cwiseInverse();
    const Matrix wl = w.asDiagonal() * p.lambda;
    const Matrix cov = spd_inverse(Matrix::Identity(r, r) + p.lambda.transpose() * wl, "EM posterior precision");
    const Matrix beta = cov * wl.transpose();  // r x N

    StaticEmStep out;
    out.cond_mean = xc * beta.transpose();
    out.cond_cov = cov;
    const Matrix sff = cov + out.cond_mean.transpose() * out.cond_mean / td;
    const Matrix sxf = xc.transpose() * out.cond_mean / td;  // N x r
    const Vector sxx = xc.array().square().colwise().mean().transpose();

    out.next.alpha = p.alpha;
    out.next.lambda = spd_solve(sff, sxf.transpose(), "EM factor second moment").transpose();
    const Matrix& l = out.next.lambda;
    out.next.sigma2 = sxx - 2.0 * l.cwiseProduct(sxf).rowwise().sum() + (l * sff).cwiseProduct(l).rowwise().sum();
    out.clamped = apply_floor(out.next.sigma2, floor, "static EM");
    return out;
}

StaticEmFit static_em_fit(const Panel& panel, Index r, const StaticParams& init, Index max_iter, double tol) {
    if (!(tol > 0.0)) throw Error("static_em_fit: tol must be positive");
    if (!panel.complete()) throw Error("static_em_fit: panel has missing cells");
    if (init.r() != r || init.N() != panel.N() || init.sigma2.size() != panel.N())
        throw Error("static_em_fit: initial parameters do not match the panel");
    if ((init.sigma2.array() <= 0.0).any()) throw Error("static_em_fit: initial variances must be positive");

    Demeaned dm = demean(panel);
    const Matrix& xc = dm.centered.values;
    const Vector floor = variance_floor(xc);

    StaticEmFit fit;
    StaticParams cur = init;
    cur.alpha = dm.alpha_hat;
    fit.loglik_trace.push_back(static_loglik(xc, cur));
    for (Index k = 1; k <= max_iter; ++k) {
        StaticEmStep step = static_em_step(xc, cur, floor);
        fit.clamped += step.clamped;
        cur = std::move(step.next);
        const double ll = static_loglik(xc, cur);
        const double prev = fit.loglik_trace.back();
        fit.loglik_trace.push_back(ll);
        fit.iterations = k;
        if (std::abs(ll - prev) <= tol * std::abs(prev)) {
            fit.converged = true;
            break;
        }
    }

    const FactorPath lp = lp_factors(dm.centered, cur);
    Identified id = identify_rotation(cur.lambda, lp.values);
    cur.lambda = std::move(id.lambda);
    fit.params = std::move(cur);
    return fit;
}

StaticEmFit static_em_fit(const Panel& panel, Index r, Index max_iter, double tol) {
    const PcFit pc = pc_fit(panel, r);
    StaticParams init = pc.params;
    Demeaned dm = demean(panel);
    Vector floor = variance_floor(dm.centered.values);
    apply_floor(init.sigma2, floor, "static EM init");
    return static_em_fit(panel, r, init, max_iter, tol);
}

FactorPath wls_factors(const Panel& centered, const StaticParams& params) {
    if ((params.sigma2.array() <= 0.0).any()) throw Error("wls_factors: variances must be positive");
    return {weighted_factor_projection(centered, params.lambda, params.sigma2.cwiseInverse(), 0.0),
            FactorMethod::WLS};
}

FactorPath lp_factors(const Panel& centered, const StaticParams& params) {
    if ((params.sigma2.array() <= 0.0).any()) throw Error("lp_factors: variances must be positive");
    return {weighted_factor_projection(centered, params.lambda, params.sigma2.cwiseInverse(), 1.0),
            FactorMethod::LP};
}

IterativeFit iterative_ols_wls(const Panel& panel, Index r, Index max_iter, double tol) {
    const PcFit pc = pc_fit(panel, r);
    Demeaned dm = demean(panel);
    const Matrix& xc = dm.centered.values;
    const Vector floor = variance_floor(xc);

    StaticParams cur = pc.params;
    apply_floor(cur.sigma2, floor, "iterative OLS/WLS init");

    IterativeFit fit;
    StaticParams best = cur;
    double best_obj = cur.sigma2.array().log().sum();
    for (Index k = 1; k <= max_iter; ++k) {
        const Matrix f = wls_factors(dm.centered, cur).values;
        StaticParams next;
        next.alpha = dm.alpha_hat;
        next.lambda = ols_loadings(dm.centered, f);
        const Matrix resid = xc - f * next.lambda.transpose();
        next.sigma2 = resid.array().square().colwise().mean().transpose();
        apply_floor(next.sigma2, floor, "iterative OLS/WLS");

        const double change = std::max((next.lambda - cur.lambda).norm() / cur.lambda.norm(),
                                       (next.sigma2 - cur.sigma2).norm() / cur.sigma2.norm());
        const double obj = next.sigma2.array().log().sum();
        fit.rss_trace.push_back(resid.squaredNorm());
        fit.objective_trace.push_back(obj);
        fit.iterations = k;
        cur = std::move(next);
        if (obj <= best_obj) {
            best_obj = obj;
            best = cur;
        }
        if (change < tol) {
            fit.converged = true;
            break;
        }
    }
    if (!fit.converged) {
        warn("iterative_ols_wls: no convergence within max_iter; returning best iterate");
        cur = best;
    }

    const Matrix f = wls_factors(dm.centered, cur).values;
    Identified id = identify_rotation(cur.lambda, f);
    cur.lambda = std::move(id.lambda);
    fit.params = std::move(cur);
    fit.factors = {std::move(id.factors), FactorMethod::WLS};
    return fit;
}

Ar1IdioParams ar1_idio_fit(const Matrix& e) {
    const Index T = e.rows(), N = e.cols();
    if (T < 3) throw Error("ar1_idio_fit: need at least 3 periods");
    Ar1IdioParams out;
    out.alpha.resize(N);
    out.omega2.resize(N);
    Index clipped = 0, floored = 0;
    for (Index i = 0; i < N; ++i) {
        const auto cur = e.col(i).tail(T - 1);
        const auto lag = e.col(i).head(T - 1);
        const double den = lag.squaredNorm();
        const double var = e.col(i).squaredNorm() / static_cast<double>(T);
        double a = 0.0, w2 = var;
        if (den > 0.0) {
            a = cur.dot(lag) / den;
            if (a > 0.99 || a < -0.99) {
                a = std::clamp(a, -0.99, 0.99);
                ++clipped;
            }
            w2 = (cur - a * lag).squaredNorm() / static_cast<double>(T - 1);
        }
        const double floor = var > 0.0 ? 1e-8 * var : 1e-12;
        if (!(w2 >= floor)) {
            w2 = floor;
            ++floored;
        }
        out.alpha(i) = a;
        out.omega2(i) = w2;
    }
    if (clipped > 0) warn("ar1_idio_fit: " + std::to_string(clipped) + " AR coefficient(s) clipped to 0.99");
    if (floored > 0) warn("ar1_idio_fit: " + std::to_string(floored) + " innovation variance(s) floor-clamped");
    return out;
}

Matrix ar1_precision_product(const Matrix& a, const Matrix& b, double alpha, double omega2) {
    const Index T = a.rows();
    if (b.rows() != T) throw Error("ar1_precision_product: row mismatch");
    if (T == 1) return (1.0 - alpha * alpha) / omega2 * a.transpose() * b;
    Vector d = Vector::Constant(T, 1.0 + alpha * alpha);
    d(0) = 1.0;
    d(T - 1) = 1.0;
    Matrix out = a.transpose() * d.asDiagonal() * b;
    out.noalias() -= alpha * (a.topRows(T - 1).transpose() * b.bottomRows(T - 1));
    out.noalias() -= alpha * (a.bottomRows(T - 1).transpose() * b.topRows(T - 1));
    return out / omega2;
}

Matrix gls_loadings_ar1(const Panel& centered, const Matrix& factors, const Ar1IdioParams& idio) {
    const Matrix xc = require_complete(centered, "gls_loadings_ar1");
    const Index N = xc.cols(), r = factors.cols();
    if (factors.rows() != xc.rows()) throw Error("gls_loadings_ar1: factor path length differs from T");
    if (idio.alpha.size() != N || idio.omega2.size() != N) throw Error("gls_loadings_ar1: AR parameter count");
    Matrix lambda(N, r);
    for (Index i = 0; i < N; ++i) {
        const double a = idio.alpha(i);
        if (!(std::abs(a) < 1.0)) throw Error("gls_loadings_ar1: |alpha| must be below 1");
        const Matrix gram = ar1_precision_product(factors, factors, a, idio.omega2(i));
        const Matrix rhs = ar1_precision_product(factors, xc.col(i), a, idio.omega2(i));
        lambda.row(i) = spd_solve(gram, rhs, "gls_loadings_ar1: weighted Gram for series " + centered.names[i])
                            .transpose();
    }
    return lambda;
}

FactorPath gls_factors_banded(const Panel& centered, const Matrix& lambda, const Matrix& gamma_xi) {
    const Matrix xc = require_complete(centered, "gls_factors_banded");
    const Index N = xc.cols();
    if (gamma_xi.rows() != N || gamma_xi.cols() != N || lambda.rows() != N)
        throw Error("gls_factors_banded: dimension mismatch");
    const double scale = std::max(1.0, gamma_xi.cwiseAbs().maxCoeff());
    if ((gamma_xi - gamma_xi.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw Error("gls_factors_banded: covariance is not symmetric");
    Eigen::LLT<Matrix> llt(gamma_xi);
    if (llt.info() != Eigen::Success) throw Error("gls_factors_banded: covariance is not positive definite");
    const Matrix wl = llt.solve(lambda);  // Gamma^{-1} Lambda
    const Matrix gram = lambda.transpose() * wl;
    return {spd_solve(gram, wl.transpose() * xc.transpose(), "gls_factors_banded: weighted Gram").transpose(),
            FactorMethod::GLS0};
}

Matrix banded_idio_cov(const Matrix& resid, Index half_band, double load_fraction) {
    const Index T = resid.rows(), N = resid.cols();
    if (half_band < 0) throw Error("banded_idio_cov: half band must be non-negative");
    Matrix c = resid.transpose() * resid / static_cast<double>(T);
    for (Index i = 0; i < N; ++i)
        for (Index j = 0; j < N; ++j)
            if (std::abs(i - j) > half_band) c(i, j) = 0.0;
    const double load = load_fraction * std::max(c.diagonal().mean(), 1e-300);
    c.diagonal().array() += load;
    Eigen::SelfAdjointEigenSolver<Matrix> es(c, Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues().minCoeff();
    if (lmin < load) {
        c.diagonal().array() += load - lmin;
        warn("banded_idio_cov: banded covariance was indefinite; diagonal shifted by " + std::to_string(load - lmin));
    }
    return c;
}

}  // namespace dfm
