#include "dfm/inference.hpp"

#include "dfm/pca.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>

namespace dfm {

namespace {

Matrix psd_part(const Matrix& m) {
    const Matrix s = symmetrize(m);
    Eigen::SelfAdjointEigenSolver<Matrix> es(s);
    if (es.eigenvalues().minCoeff() >= 0.0) return s;
    const Vector d = es.eigenvalues().cwiseMax(0.0);
    return symmetrize(es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose());
}

}  // namespace

Index auto_bandwidth(Index T) {
    return static_cast<Index>(std::floor(4.0 * std::pow(static_cast<double>(T) / 100.0, 2.0 / 9.0)));
}

Matrix hac_loading_cov(const Matrix& f, const Vector& e, std::optional<Index> bandwidth) {
    const Index T = f.rows();
    if (e.size() != T) throw Error("hac_loading_cov: residual length differs from T");
    const Index m = bandwidth ? *bandwidth : auto_bandwidth(T);
    if (m < 0 || m >= T) throw Error("hac_loading_cov: bandwidth must satisfy 0 <= m < T");
    const double td = static_cast<double>(T);
    const Matrix g = f.array().colwise() * e.array();  // T x r
    Matrix lrv = g.transpose() * g / td;
    for (Index k = 1; k <= m; ++k) {
        const double w = 1.0 - static_cast<double>(k) / static_cast<double>(m + 1);
        const Matrix gk = g.bottomRows(T - k).transpose() * g.topRows(T - k) / td;
        lrv += w * (gk + gk.transpose());
    }
    const Matrix bread = spd_inverse(f.transpose() * f / td, "hac_loading_cov: factor Gram");
    return symmetrize(bread * lrv * bread);
}

Matrix cs_hac_factor_cov(const Matrix& lambda, const Vector& e, const Matrix& sigma_pairs, Index half_band,
                         CsWeights weights, const Vector& sigma2) {
    const Index N = lambda.rows(), r = lambda.cols();
    if (half_band < 0) throw Error("cs_hac_factor_cov: half band must be non-negative");
    if (e.size() != N) throw Error("cs_hac_factor_cov: residual length differs from N");
    if (half_band > 0 && (sigma_pairs.rows() != N || sigma_pairs.cols() != N))
        throw Error("cs_hac_factor_cov: pair covariance must be N x N");
    Vector w = Vector::Ones(N);
    if (weights == CsWeights::wls) {
        if (sigma2.size() != N || (sigma2.array() <= 0.0).any())
            throw Error("cs_hac_factor_cov: wls weights need positive variances");
        w = sigma2.cwiseInverse();
    }
    const double nd = static_cast<double>(N);
    const Matrix a = w.asDiagonal() * lambda;  // rows w_i lambda_i'
    Matrix meat = a.transpose() * e.cwiseAbs2().asDiagonal() * a;
    for (Index k = 1; k <= half_band && k < N; ++k) {
        const double kw = 1.0 - static_cast<double>(k) / static_cast<double>(half_band + 1);
        Matrix acc = Matrix::Zero(r, r);
        for (Index i = 0; i + k < N; ++i) acc += sigma_pairs(i, i + k) * a.row(i).transpose() * a.row(i + k);
        meat += kw * (acc + acc.transpose());
    }
    meat /= nd;
    const Matrix bread = spd_inverse(lambda.transpose() * w.asDiagonal() * lambda / nd, "cs_hac_factor_cov: bread");
    // Banded pair covariances need not give a PSD meat; the result is clipped to the PSD cone.
    return psd_part(bread * meat * bread);
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw Error("normal_quantile: probability must lie in (0, 1)");
    return boost::math::quantile(boost::math::normal(), p);
}

Bands common_component_bands(const Matrix& lambda, const Matrix& f, const LoadingCov& vcov, const FactorCov& wcov,
                             double level) {
    if (!(level > 0.0 && level < 1.0)) throw Error("bands: level must lie in (0, 1)");
    const Index T = f.rows(), N = lambda.rows();
    if (static_cast<Index>(vcov.v_i.size()) != N || static_cast<Index>(wcov.w_t.size()) != T)
        throw Error("bands: covariance counts do not match the fit");
    Bands b;
    b.z = normal_quantile(0.5 * (1.0 + level));
    b.center = f * lambda.transpose();
    b.half_width.resize(T, N);
    const double td = static_cast<double>(T), nd = static_cast<double>(N);
    for (Index i = 0; i < N; ++i) {
        const Vector li = lambda.row(i).transpose();
        for (Index t = 0; t < T; ++t) {
            const Vector ft = f.row(t).transpose();
            const double var = ft.dot(vcov.v_i[i] * ft) / td + li.dot(wcov.w_t[t] * li) / nd;
            b.half_width(t, i) = b.z * std::sqrt(std::max(var, 0.0));
        }
    }
    return b;
}

BandInputs band_covariances(const Matrix& xc, const Matrix& lambda, const Matrix& f, const Vector& sigma2,
                            CsWeights weights, std::optional<Index> bandwidth, Index half_band) {
    const Index T = xc.rows(), N = xc.cols();
    const Matrix resid = xc - f * lambda.transpose();
    BandInputs out;
    out.loading.bandwidth = bandwidth ? *bandwidth : auto_bandwidth(T);
    out.factor.half_band = half_band;
    out.loading.v_i.reserve(N);
    for (Index i = 0; i < N; ++i) out.loading.v_i.push_back(hac_loading_cov(f, resid.col(i), out.loading.bandwidth));
    Matrix pairs;
    if (half_band > 0) pairs = resid.transpose() * resid / static_cast<double>(T);
    out.factor.w_t.reserve(T);
    for (Index t = 0; t < T; ++t)
        out.factor.w_t.push_back(
            cs_hac_factor_cov(lambda, resid.row(t).transpose(), pairs, half_band, weights, sigma2));
    return out;
}

FactorCount select_num_factors(const Panel& panel, Index r_max) {
    const Index T = panel.T(), N = panel.N();
    if (!panel.complete()) throw Error("select_num_factors: panel has missing cells; impute first");
    if (r_max < 1 || r_max >= std::min(N, T)) throw Error("select_num_factors: r_max must satisfy 1 <= r_max < min(N, T)");
    const Demeaned dm = demean(panel);
    const CovSpectrum spec = covariance_spectrum(dm.centered.values, r_max);
    const double nd = static_cast<double>(N), td = static_cast<double>(T);
    const double penalty = (nd + td) / (nd * td) * std::log(static_cast<double>(std::min(N, T)));
    // Residual variance floored relative to total variance so rank-deficient panels stay finite.
    const double floor = std::max(1e-10 * spec.trace / nd, 1e-300);
    FactorCount out;
    double best = 0.0, explained = 0.0;
    for (Index r = 1; r <= r_max; ++r) {
        explained += spec.eigvals(r - 1);
        const double v = std::max((spec.trace - explained) / nd, floor);
        const double ic = std::log(v) + static_cast<double>(r) * penalty;
        out.criterion.push_back(ic);
        if (r == 1 || ic < best) {
            best = ic;
            out.r_hat = r;
        }
    }
    return out;
}

}  // namespace dfm
