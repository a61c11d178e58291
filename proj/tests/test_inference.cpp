#include "oracles.hpp"

#include "dfm/inference.hpp"
#include "dfm/pca.hpp"
#include "dfm/sim.hpp"

#include <doctest.h>

using namespace dfm;

TEST_CASE("auto_bandwidth follows the T^(2/9) rule") {
    CHECK(auto_bandwidth(100) == 4);
    CHECK(auto_bandwidth(50) == 3);
    CHECK(auto_bandwidth(200) == 4);
    CHECK(auto_bandwidth(1000) == 6);
}

TEST_CASE("hac_loading_cov equals the explicit Bartlett double sum") {
    std::mt19937_64 g(301);
    for (Index m : {0, 1, 4}) {
        const Matrix f = oracle::randn(g, 60, 2);
        const Vector e = oracle::randn(g, 60, 1);
        const Matrix gmat = f.array().colwise() * e.array();
        const Matrix bread = (f.transpose() * f / 60.0).inverse();
        const Matrix ref = bread * oracle::bartlett_lrv_loops(gmat, m) * bread;
        CHECK(oracle::max_abs(hac_loading_cov(f, e, m) - ref) < 1e-12);
    }
}

TEST_CASE("cs_hac_factor_cov equals the explicit cross-sectional sum") {
    std::mt19937_64 g(303);
    const Index N = 12, r = 2, h = 3;
    const Matrix l = oracle::randn(g, N, r);
    const Vector e = oracle::randn(g, N, 1);
    const Matrix pairs = [&] {
        const Matrix z = oracle::randn(g, 50, N);
        return Matrix(z.transpose() * z / 50.0);
    }();
    Vector s2(N);
    for (Index i = 0; i < N; ++i) s2(i) = oracle::unif(g, 0.5, 2.0);

    for (CsWeights wt : {CsWeights::ols, CsWeights::wls}) {
        Vector w = Vector::Ones(N);
        if (wt == CsWeights::wls) w = s2.cwiseInverse();
        Matrix meat = Matrix::Zero(r, r), gram = Matrix::Zero(r, r);
        for (Index i = 0; i < N; ++i) {
            gram += w(i) * l.row(i).transpose() * l.row(i);
            for (Index j = 0; j < N; ++j) {
                const Index d = std::abs(i - j);
                if (d > h) continue;
                const double k = 1.0 - static_cast<double>(d) / (h + 1);
                const double c = i == j ? e(i) * e(i) : pairs(i, j);
                meat += k * c * w(i) * w(j) * l.row(i).transpose() * l.row(j);
            }
        }
        const Matrix bread = (gram / N).inverse();
        Matrix ref = bread * (meat / N) * bread;
        Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (ref + ref.transpose()));
        ref = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
        CHECK(oracle::max_abs(cs_hac_factor_cov(l, e, pairs, h, wt, s2) - ref) < 1e-11);
    }
}

TEST_CASE("normal_quantile matches tabulated values") {
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959964).epsilon(1e-6));
    CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
    CHECK(normal_quantile(0.95) == doctest::Approx(1.644854).epsilon(1e-6));
    CHECK_THROWS_AS(normal_quantile(1.0), Error);
}

TEST_CASE("bands are z times the plug-in standard error") {
    std::mt19937_64 g(307);
    const Index T = 40, N = 15;
    const Matrix f = oracle::randn(g, T, 2), l = oracle::randn(g, N, 2);
    const Matrix xc = f * l.transpose() + 0.5 * oracle::randn(g, T, N);
    const PcFit fit = pc_fit(Panel::from_matrix(xc), 2);
    const Matrix& lh = fit.params.lambda;
    const Matrix& fh = fit.factors.values;
    const BandInputs in = band_covariances(xc, lh, fh, fit.params.sigma2, CsWeights::ols, {}, 0);
    const Bands b = common_component_bands(lh, fh, in.loading, in.factor, 0.95);
    CHECK(b.z == doctest::Approx(1.959964).epsilon(1e-6));
    for (Index i : {0, 7})
        for (Index t : {0, 19}) {
            const Vector ft = fh.row(t).transpose(), li = lh.row(i).transpose();
            const double se = std::sqrt(ft.dot(in.loading.v_i[i] * ft) / T + li.dot(in.factor.w_t[t] * li) / N);
            CHECK(b.half_width(t, i) == doctest::Approx(1.959964 * se).epsilon(1e-6));
            CHECK(b.center(t, i) == doctest::Approx(li.dot(ft)));
        }
    CHECK(b.center.rows() == T);
}

TEST_CASE("a series with zero residuals and zero loadings gets a zero-width band") {
    std::mt19937_64 g(311);
    const Index T = 30, N = 8;
    const Matrix f = oracle::randn(g, T, 2);
    Matrix l = oracle::randn(g, N, 2);
    l.row(3).setZero();
    Matrix xc = f * l.transpose() + 0.5 * oracle::randn(g, T, N);
    xc.col(3).setZero();
    Matrix lh = l;
    const BandInputs in = band_covariances(xc, lh, f, Vector::Ones(N), CsWeights::ols, {}, 0);
    const Bands b = common_component_bands(lh, f, in.loading, in.factor, 0.9);
    CHECK(b.half_width.col(3).cwiseAbs().maxCoeff() == 0.0);
    CHECK(b.half_width.col(0).minCoeff() > 0.0);
}

TEST_CASE("select_num_factors") {
    std::mt19937_64 g(313);
    const Matrix f = oracle::randn(g, 80, 2), l = oracle::randn(g, 40, 2);
    const FactorCount exact = select_num_factors(Panel::from_matrix(f * l.transpose()), 6);
    CHECK(exact.r_hat == 2);
    CHECK(exact.criterion.size() == 6);

    DgpConfig cfg;
    cfg.n = 100;
    cfg.t = 100;
    const FactorCount sim = select_num_factors(simulate(cfg, 0).panel, 8);
    CHECK(sim.r_hat == 2);
    CHECK_THROWS_AS(select_num_factors(Panel::from_matrix(f * l.transpose()), 40), Error);
}
