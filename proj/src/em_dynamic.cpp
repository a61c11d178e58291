#include "dfm/em_dynamic.hpp"

#include "dfm/pca.hpp"
#include "dfm/static_qml.hpp"

#include <cmath>
#include <sstream>

namespace dfm {

namespace {

std::string describe(const DynamicParams& p) {
    std::ostringstream os;
    os.precision(10);
    os << "A=[" << p.a_mat.reshaped().transpose() << "] H=[" << p.h_mat.reshaped().transpose()
       << "] |lambda|=" << p.base.lambda.norm() << " sum(sigma2)=" << p.base.sigma2.sum();
    return os.str();
}

Vector observed_floor(const Panel& centered) {
    Vector out(centered.N());
    for (Index i = 0; i < centered.N(); ++i) {
        double s = 0.0;
        Index n = 0;
        for (Index t = 0; t < centered.T(); ++t)
            if (centered.mask(t, i)) {
                s += centered.values(t, i) * centered.values(t, i);
                ++n;
            }
        const double v = n > 0 ? s / static_cast<double>(n) : 0.0;
        out(i) = v > 0.0 ? 1e-8 * v : 1e-300;
    }
    return out;
}

}  // namespace

DynamicParams em_initialize(const Panel& panel, Index r) {
    const Index T = panel.T();
    const Demeaned dm = demean(panel);
    const Panel filled = panel.complete() ? panel : impute_missing_sw(panel, r);
    const PcFit pc = pc_fit(filled, r);
    const Matrix& f = pc.factors.values;

    const Matrix cur = f.bottomRows(T - 1);
    const Matrix lag = f.topRows(T - 1);
    DynamicParams p;
    p.a_mat = spd_solve(lag.transpose() * lag, lag.transpose() * cur, "VAR(1) regressor Gram").transpose();
    const double rho = spectral_radius(p.a_mat);
    if (rho >= 1.0) {
        warn("em_initialize: initial VAR unstable (radius " + std::to_string(rho) + "), shrunk to 0.98");
        p.a_mat *= 0.98 / rho;
    }
    const Matrix u = cur - lag * p.a_mat.transpose();
    p.h_mat = psd_cholesky(u.transpose() * u / static_cast<double>(T - 1));

    p.base.alpha = dm.alpha_hat;
    p.base.lambda = pc.params.lambda;
    p.base.sigma2 = pc.params.sigma2;
    const Vector floor = observed_floor(dm.centered);
    for (Index i = 0; i < p.base.sigma2.size(); ++i) p.base.sigma2(i) = std::max(p.base.sigma2(i), floor(i));
    return p;
}

SuffStats accumulate_moments(const SmootherOutput& sm) {
    const Index T = sm.f_smooth.rows(), r = sm.f_smooth.cols();
    SuffStats st;
    st.ff = Matrix::Zero(r, r);
    st.ff_lag = Matrix::Zero(r, r);
    st.ff_prev = Matrix::Zero(r, r);
    st.second.resize(T);
    for (Index t = 0; t < T; ++t) {
        const Vector f = sm.f_smooth.row(t).transpose();
        st.second[t] = f * f.transpose() + sm.p_smooth[t];
        st.ff += st.second[t];
    }
    const Vector f1 = sm.f_smooth.row(0).transpose();
    st.ff_lag = f1 * sm.f0.transpose() + sm.c10;
    st.ff_prev = sm.f0 * sm.f0.transpose() + sm.p0;
    for (Index t = 1; t < T; ++t) {
        const Vector f = sm.f_smooth.row(t).transpose();
        const Vector fl = sm.f_smooth.row(t - 1).transpose();
        st.ff_lag += f * fl.transpose() + sm.c_lag[t - 1];
        st.ff_prev += st.second[t - 1];
    }
    st.ff = symmetrize(st.ff);
    st.ff_prev = symmetrize(st.ff_prev);
    return st;
}

EStep em_estep(const Panel& centered, const DynamicParams& params, const EmOptions& opts) {
    const FilterOutput kf = kalman_filter(centered, params, opts.filter);
    EStep out;
    out.smoother = kalman_smoother(kf, centered, params, opts.smoother);
    out.stats = accumulate_moments(out.smoother);
    return out;
}

DynamicParams em_mstep(const Panel& centered, const SuffStats& st, const Matrix& f_smooth, const Vector& alpha,
                       const Vector& sigma2_floor) {
    const Index T = centered.T(), N = centered.N(), r = f_smooth.cols();
    DynamicParams p;
    p.base.alpha = alpha;
    p.base.lambda.resize(N, r);
    p.base.sigma2.resize(N);

    Index clamped = 0;
    if (centered.complete()) {
        const Matrix fx = centered.values.transpose() * f_smooth;  // N x r, sum_t x_it E[F_t]'
        p.base.lambda = spd_solve(st.ff, fx.transpose(), "M-step factor second moment").transpose();
        const Matrix& l = p.base.lambda;
        const Vector xx = centered.values.colwise().squaredNorm().transpose();
        p.base.sigma2 = (xx - 2.0 * l.cwiseProduct(fx).rowwise().sum() + (l * st.ff).cwiseProduct(l).rowwise().sum()) /
                        static_cast<double>(T);
    } else {
        for (Index i = 0; i < N; ++i) {
            Matrix g = Matrix::Zero(r, r);
            Vector fx = Vector::Zero(r);
            double xx = 0.0;
            Index n = 0;
            for (Index t = 0; t < T; ++t) {
                if (!centered.mask(t, i)) continue;
                const double x = centered.values(t, i);
                g += st.second[t];
                fx += x * f_smooth.row(t).transpose();
                xx += x * x;
                ++n;
            }
            const Vector l = spd_solve(g, fx, "M-step moments for series " + centered.names[i]);
            p.base.lambda.row(i) = l.transpose();
            p.base.sigma2(i) = (xx - 2.0 * l.dot(fx) + l.dot(g * l)) / static_cast<double>(n);
        }
    }
    for (Index i = 0; i < N; ++i) {
        if (!(p.base.sigma2(i) >= sigma2_floor(i))) {
            p.base.sigma2(i) = sigma2_floor(i);
            ++clamped;
        }
    }
    if (clamped > 0) warn("em_mstep: " + std::to_string(clamped) + " idiosyncratic variance(s) clamped at floor");

    p.a_mat = spd_solve(st.ff_prev, st.ff_lag.transpose(), "M-step lagged second moment").transpose();
    const Matrix q = (st.ff - p.a_mat * st.ff_lag.transpose()) / static_cast<double>(T);
    p.h_mat = psd_cholesky(q);
    return p;
}

void rotate_system(DynamicEmFit& fit, const Matrix& rot) {
    const Matrix rinv = rot.inverse();
    DynamicParams& p = fit.params;
    p.base.lambda = p.base.lambda * rot;
    p.a_mat = rinv * p.a_mat * rot;
    p.h_mat = psd_cholesky(rinv * p.h_mat * p.h_mat.transpose() * rinv.transpose());
    SmootherOutput& s = fit.smoother;
    s.f_smooth = s.f_smooth * rinv.transpose();
    for (auto& m : s.p_smooth) m = symmetrize(rinv * m * rinv.transpose());
    for (auto& m : s.c_lag) m = rinv * m * rinv.transpose();
    s.f0 = rinv * s.f0;
    s.p0 = symmetrize(rinv * s.p0 * rinv.transpose());
    s.c10 = rinv * s.c10 * rinv.transpose();
    if (fit.f_filt.size() > 0) fit.f_filt = fit.f_filt * rinv.transpose();
}

DynamicEmFit em_fit(const Panel& panel, Index r, Index max_iter, double tol) {
    EmOptions opts;
    opts.max_iter = max_iter;
    opts.tol = tol;
    return em_fit(panel, r, opts);
}

DynamicEmFit em_fit(const Panel& panel, Index r, const EmOptions& opts) {
    if (r < 1 || r >= std::min(panel.N(), panel.T())) throw Error("em_fit: r must satisfy 1 <= r < min(N, T)");
    if (!(opts.tol > 0.0)) throw Error("em_fit: tol must be positive");
    const Demeaned dm = demean(panel);
    const Panel& xc = dm.centered;
    const Vector floor = observed_floor(xc);

    DynamicEmFit fit;
    DynamicParams cur = em_initialize(panel, r);
    fit.max_spectral_radius = spectral_radius(cur.a_mat);
    DynamicParams prev_params = cur;
    for (Index k = 0;; ++k) {
        EStep es = em_estep(xc, cur, opts);
        const double ll = es.smoother.loglik;
        if (!fit.loglik_trace.empty()) {
            const double prev = fit.loglik_trace.back();
            if (prev - ll > opts.monotone_slack * (std::abs(prev) + 1.0)) {
                throw Error("em_fit: log-likelihood decreased at iteration " + std::to_string(k) + " from " +
                            std::to_string(prev) + " to " + std::to_string(ll) + "\n  previous: " +
                            describe(prev_params) + "\n  current:  " + describe(cur));
            }
        }
        fit.loglik_trace.push_back(ll);
        fit.iterations = k;
        const Index n = static_cast<Index>(fit.loglik_trace.size());
        bool stop = false;
        if (n >= 2) {
            const double prev = fit.loglik_trace[n - 2];
            if (std::abs(ll - prev) / (std::abs(prev) + 1.0) < opts.tol) {
                fit.converged = true;
                stop = true;
            }
        }
        if (k >= opts.max_iter) stop = true;
        if (stop) {
            fit.params = cur;
            fit.smoother = std::move(es.smoother);
            break;
        }
        prev_params = cur;
        cur = em_mstep(xc, es.stats, es.smoother.f_smooth, dm.alpha_hat, floor);
        fit.max_spectral_radius = std::max(fit.max_spectral_radius, spectral_radius(cur.a_mat));
    }
    fit.f_filt = kalman_filter(xc, fit.params, opts.filter).f_filt;

    const Identified id = identify_rotation(fit.params.base.lambda, fit.smoother.f_smooth);
    rotate_system(fit, id.rotation);
    fit.params.base.lambda = id.lambda;
    fit.smoother.f_smooth = id.factors;
    return fit;
}

}  // namespace dfm
