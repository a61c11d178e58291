#include "oracles.hpp"

#include "dfm/em_dynamic.hpp"
#include "dfm/sim.hpp"

#include <doctest.h>

using namespace dfm;

TEST_CASE("accumulate_moments sums smoothed second moments including the pre-sample pair") {
    std::mt19937_64 g(201);
    const auto in = oracle::random_instance(g, 12, 5, 2);
    const SmootherOutput s = kalman_smoother(kalman_filter(in.centered, in.params), in.centered, in.params);
    const SuffStats st = accumulate_moments(s);
    Matrix ff = Matrix::Zero(2, 2), lag = Matrix::Zero(2, 2), prev = Matrix::Zero(2, 2);
    const Index T = 12;
    for (Index t = 0; t < T; ++t) {
        const Vector f = s.f_smooth.row(t).transpose();
        ff += s.p_smooth[t] + f * f.transpose();
        if (t == 0) {
            lag += s.c10 + f * s.f0.transpose();
            prev += s.p0 + s.f0 * s.f0.transpose();
        } else {
            const Vector fp = s.f_smooth.row(t - 1).transpose();
            lag += s.c_lag[t - 1] + f * fp.transpose();
            prev += s.p_smooth[t - 1] + fp * fp.transpose();
        }
    }
    CHECK(oracle::max_abs(st.ff - ff) < 1e-10);
    CHECK(oracle::max_abs(st.ff_lag - lag) < 1e-10);
    CHECK(oracle::max_abs(st.ff_prev - prev) < 1e-10);
}

TEST_CASE("em_mstep maximizes the expected complete-data likelihood") {
    std::mt19937_64 g(203);
    for (double missing : {0.0, 0.2}) {
        const auto in = oracle::random_instance(g, 30, 6, 2, missing);
        const EStep es = em_estep(in.centered, in.params);
        const DynamicParams next = em_mstep(in.centered, es.stats, es.smoother.f_smooth, in.params.base.alpha, Vector::Zero(6));
        const SuffStats& st = es.stats;
        const Index T = 30;

        const Matrix a = st.ff_lag * st.ff_prev.inverse();
        const Matrix q = (st.ff - a * st.ff_lag.transpose()) / static_cast<double>(T);
        CHECK(oracle::max_abs(next.a_mat - a) < 1e-10);
        CHECK(oracle::max_abs(next.h_mat * next.h_mat.transpose() - q) < 1e-10);

        for (Index i = 0; i < 6; ++i) {
            Matrix gg = Matrix::Zero(2, 2);
            Vector fx = Vector::Zero(2);
            double xx = 0.0;
            Index n = 0;
            for (Index t = 0; t < T; ++t) {
                if (!in.centered.mask(t, i)) continue;
                const Vector f = es.smoother.f_smooth.row(t).transpose();
                gg += es.smoother.p_smooth[t] + f * f.transpose();
                fx += in.centered.values(t, i) * f;
                xx += in.centered.values(t, i) * in.centered.values(t, i);
                ++n;
            }
            const Vector l = gg.inverse() * fx;
            CHECK(oracle::max_abs(next.base.lambda.row(i).transpose() - l) < 1e-10);
            CHECK(next.base.sigma2(i) == doctest::Approx((xx - 2.0 * l.dot(fx) + l.dot(gg * l)) / n).epsilon(1e-10));
        }
    }
}

TEST_CASE("EM likelihood is monotone on random panels, with and without gaps") {
    std::mt19937_64 g(207);
    for (int rep = 0; rep < 12; ++rep) {
        const auto in = oracle::random_instance(g, 50, 10 + rep, 1 + rep % 2, rep % 3 == 0 ? 0.1 : 0.0);
        EmOptions opts;
        opts.max_iter = 60;
        opts.tol = 1e-9;
        const DynamicEmFit fit = em_fit(in.centered, in.params.r(), opts);
        for (std::size_t k = 1; k < fit.loglik_trace.size(); ++k)
            CHECK(fit.loglik_trace[k] - fit.loglik_trace[k - 1] >= -1e-6 * (std::abs(fit.loglik_trace[k - 1]) + 1.0));
        CHECK(fit.max_spectral_radius < 1.5);
    }
}

TEST_CASE("EM output satisfies the identification constraints") {
    std::mt19937_64 g(211);
    const auto in = oracle::random_instance(g, 80, 20, 2);
    const DynamicEmFit fit = em_fit(in.centered, 2);
    CHECK(fit.converged);
    const Matrix& l = fit.params.base.lambda;
    const Matrix ll = l.transpose() * l;
    CHECK(std::abs(ll(0, 1)) < 1e-9 * ll.trace());
    CHECK(ll(0, 0) >= ll(1, 1));
    const Matrix ff = fit.smoother.f_smooth.transpose() * fit.smoother.f_smooth / 80.0;
    CHECK(oracle::max_abs(ff - Matrix::Identity(2, 2)) < 1e-9);
    for (Index j = 0; j < 2; ++j) CHECK(l(0, j) > 0.0);
}

TEST_CASE("rotate_system leaves the common component unchanged") {
    std::mt19937_64 g(213);
    const auto in = oracle::random_instance(g, 40, 8, 2);
    DynamicEmFit fit = em_fit(in.centered, 2, 5, 1e-12);
    const Matrix chi = fit.smoother.f_smooth * fit.params.base.lambda.transpose();
    Matrix rot(2, 2);
    rot << 1.3, 0.4, -0.2, 0.8;
    rotate_system(fit, rot);
    CHECK(oracle::max_abs(fit.smoother.f_smooth * fit.params.base.lambda.transpose() - chi) < 1e-10);
    CHECK(spectral_radius(fit.params.a_mat) == doctest::Approx(spectral_radius(rot * fit.params.a_mat * rot.inverse())));
}

TEST_CASE("rotated parameters give the same likelihood under the rotated initial variance") {
    std::mt19937_64 g(215);
    const auto in = oracle::random_instance(g, 40, 8, 2);
    Matrix rot(2, 2);
    rot << 1.3, 0.4, -0.2, 0.8;
    const Matrix ri = rot.inverse();
    DynamicParams q = in.params;
    q.base.lambda = in.params.base.lambda * rot;
    q.a_mat = ri * in.params.a_mat * rot;
    q.h_mat = psd_cholesky(ri * in.params.h_mat * in.params.h_mat.transpose() * ri.transpose());
    FilterOptions o;
    o.init_cov = 1e3 * ri * ri.transpose();
    const FilterOutput a = kalman_filter(in.centered, in.params);
    const FilterOutput b = kalman_filter(in.centered, q, o);
    CHECK(b.loglik == doctest::Approx(a.loglik).epsilon(1e-10));
    CHECK(oracle::max_abs(b.f_filt * q.base.lambda.transpose() - a.f_filt * in.params.base.lambda.transpose()) < 1e-8);
}

TEST_CASE("EM recovers simulated factors") {
    DgpConfig cfg;
    cfg.n = 50;
    cfg.t = 100;
    const SimTruth truth = simulate(cfg, 3);
    const DynamicEmFit fit = em_fit(truth.panel, 2);
    const Matrix f = align_columns(fit.smoother.f_smooth, truth.f_true);
    for (Index j = 0; j < 2; ++j) {
        const Vector a = f.col(j).array() - f.col(j).mean();
        const Vector b = truth.f_true.col(j).array() - truth.f_true.col(j).mean();
        CHECK(a.dot(b) / (a.norm() * b.norm()) > 0.95);
    }
}

TEST_CASE("em_initialize returns a stable transition and positive variances") {
    std::mt19937_64 g(217);
    const auto in = oracle::random_instance(g, 60, 12, 3, 0.05);
    const DynamicParams p = em_initialize(in.centered, 3);
    CHECK(spectral_radius(p.a_mat) < 1.0);
    CHECK((p.base.sigma2.array() > 0.0).all());
    CHECK(oracle::max_abs(Matrix(p.h_mat.triangularView<Eigen::StrictlyUpper>())) == 0.0);
}

TEST_CASE("em_fit rejects an oversized factor count") {
    std::mt19937_64 g(219);
    const auto in = oracle::random_instance(g, 10, 4, 1);
    CHECK_THROWS_AS(em_fit(in.centered, 4), Error);
}
