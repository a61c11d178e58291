#include "dfm/pca.hpp"

#include <cmath>

namespace dfm {

CovSpectrum covariance_spectrum(const Matrix& xc, Index r) {
    const Index T = xc.rows(), N = xc.cols();
    const double td = static_cast<double>(T);
    CovSpectrum out;
    out.trace = xc.squaredNorm() / td;
    if (N <= T) {
        const Matrix cov = symmetrize(xc.transpose() * xc / td);
        EigenPair ep = top_eigen(cov, r);
        out.eigvals = std::move(ep.eigvals);
        out.eigvecs = std::move(ep.eigvecs);
    } else {
        const Matrix gram = symmetrize(xc * xc.transpose() / td);
        EigenPair ep = top_eigen(gram, r);
        out.eigvals = ep.eigvals;
        out.eigvecs.resize(N, r);
        for (Index j = 0; j < r; ++j) {
            if (ep.eigvals(j) > 0.0)
                out.eigvecs.col(j) = xc.transpose() * ep.eigvecs.col(j) / std::sqrt(td * ep.eigvals(j));
            else
                out.eigvecs.col(j).setZero();
        }
    }
    return out;
}

PcFit pc_fit(const Panel& panel, Index r, const PcOptions& opts) {
    const Index T = panel.T(), N = panel.N();
    if (!panel.complete()) throw Error("pc_fit: panel has missing cells; impute first");
    if (r < 1 || r >= std::min(N, T)) throw Error("pc_fit: r must satisfy 1 <= r < min(N, T)");

    Demeaned dm = demean(panel);
    Matrix z = dm.centered.values;
    Vector scale = Vector::Ones(N);
    if (opts.standardize) {
        for (Index i = 0; i < N; ++i) {
            const double s = std::sqrt(z.col(i).squaredNorm() / static_cast<double>(T));
            if (s > 0.0) {
                scale(i) = s;
                z.col(i) /= s;
            } else {
                warn("pc_fit: series '" + panel.names[i] + "' has zero variance; left unscaled");
            }
        }
    }

    CovSpectrum spec = covariance_spectrum(z, r);
    const double top = spec.eigvals(0);
    if (!(top > 0.0) || spec.eigvals(r - 1) <= 1e-12 * top)
        throw Error("pc_fit: degenerate covariance, leading eigenvalues not positive");

    Matrix lambda = spec.eigvecs * spec.eigvals.cwiseSqrt().asDiagonal();
    Matrix f = z * spec.eigvecs * spec.eigvals.cwiseSqrt().cwiseInverse().asDiagonal();
    enforce_sign_convention(lambda, &f);

    const Matrix resid = z - f * lambda.transpose();
    Vector sigma2 = resid.array().square().colwise().mean().transpose();

    PcFit fit;
    fit.explained_variance = spec.trace > 0.0 ? spec.eigvals.sum() / spec.trace : 0.0;
    if (opts.standardize) {
        lambda = scale.asDiagonal() * lambda;
        sigma2 = sigma2.cwiseProduct(scale.cwiseAbs2());
        Identified id = identify_rotation(lambda, f);
        lambda = std::move(id.lambda);
        f = std::move(id.factors);
        fit.eigvals = (lambda.transpose() * lambda).diagonal();
    } else {
        fit.eigvals = spec.eigvals;
    }
    fit.params.alpha = dm.alpha_hat;
    fit.params.lambda = std::move(lambda);
    fit.params.sigma2 = std::move(sigma2);
    fit.factors = {std::move(f), FactorMethod::PC};
    return fit;
}

Matrix ols_loadings(const Panel& centered, const Matrix& factors) {
    const Index T = centered.T(), N = centered.N(), r = factors.cols();
    if (factors.rows() != T) throw Error("ols_loadings: factor path length differs from T");
    Matrix lambda(N, r);
    if (centered.complete()) {
        const Matrix gram = factors.transpose() * factors;
        lambda = spd_solve(gram, factors.transpose() * centered.values, "ols_loadings: F'F").transpose();
        return lambda;
    }
    for (Index i = 0; i < N; ++i) {
        Matrix gram = Matrix::Zero(r, r);
        Vector rhs = Vector::Zero(r);
        for (Index t = 0; t < T; ++t) {
            if (!centered.mask(t, i)) continue;
            gram.noalias() += factors.row(t).transpose() * factors.row(t);
            rhs.noalias() += factors.row(t).transpose() * centered.values(t, i);
        }
        lambda.row(i) = spd_solve(gram, rhs, "ols_loadings: F'F for series " + centered.names[i]).transpose();
    }
    return lambda;
}

Matrix weighted_factor_projection(const Panel& centered, const Matrix& lambda, const Vector& weights,
                                  double ridge) {
    const Index T = centered.T(), N = centered.N(), r = lambda.cols();
    if (lambda.rows() != N || weights.size() != N) throw Error("factor projection: dimension mismatch");
    const Matrix ident = Matrix::Identity(r, r);
    Matrix f(T, r);
    if (centered.complete()) {
        const Matrix wl = weights.asDiagonal() * lambda;
        const Matrix gram = lambda.transpose() * wl + ridge * ident;
        f = spd_solve(gram, wl.transpose() * centered.values.transpose(), "weighted loadings Gram").transpose();
        return f;
    }
    for (Index t = 0; t < T; ++t) {
        Matrix gram = ridge * ident;
        Vector rhs = Vector::Zero(r);
        for (Index i = 0; i < N; ++i) {
            if (!centered.mask(t, i)) continue;
            gram.noalias() += weights(i) * lambda.row(i).transpose() * lambda.row(i);
            rhs.noalias() += weights(i) * lambda.row(i).transpose() * centered.values(t, i);
        }
        f.row(t) = spd_solve(gram, rhs, "weighted loadings Gram at t=" + std::to_string(t + 1)).transpose();
    }
    return f;
}

FactorPath ols_factors(const Panel& centered, const Matrix& lambda) {
    return {weighted_factor_projection(centered, lambda, Vector::Ones(centered.N()), 0.0), FactorMethod::OLS};
}

SphericalFit spherical_qml(const Panel& panel, Index r) {
    const Index T = panel.T(), N = panel.N();
    if (!panel.complete()) throw Error("spherical_qml: panel has missing cells; impute first");
    if (r < 1 || r >= std::min(N, T)) throw Error("spherical_qml: r must satisfy 1 <= r < min(N, T)");

    Demeaned dm = demean(panel);
    CovSpectrum spec = covariance_spectrum(dm.centered.values, r);
    const double tail = spec.trace - spec.eigvals.sum();
    const double s2 = std::max(tail, 0.0) / static_cast<double>(N - r);
    if (spec.eigvals(r - 1) <= s2)
        throw Error("spherical_qml: leading eigenvalue does not exceed the noise level");

    SphericalFit out;
    out.sigma2_common = s2;
    out.lambda = spec.eigvecs * (spec.eigvals.array() - s2).sqrt().matrix().asDiagonal();
    enforce_sign_convention(out.lambda);
    return out;
}

}  // namespace dfm
