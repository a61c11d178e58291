#include "dfm/ssm.hpp"

#include "dfm/pca.hpp"

#include <cmath>
#include <numbers>

namespace dfm {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// Observed-row quantities at one time point.
struct ObsBlock {
    std::vector<Index> rows;
    Matrix lambda;   // n x r
    Vector sigma2;   // n
    Vector x;        // n
    Matrix b;        // L' S^-1 L with S = Sigma: r x r
    Vector u;        // L' Sigma^-1 x
    double q = 0.0;  // x' Sigma^-1 x
    double logdet_sigma = 0.0;
};

class ObsCache {
public:
    ObsCache(const Panel& centered, const DynamicParams& p) : centered_(centered), p_(p) {
        const Index N = centered.N();
        if (p.base.lambda.rows() != N || p.base.sigma2.size() != N)
            throw Error("state space: parameters do not match the panel");
        if ((p.base.sigma2.array() <= 0.0).any()) throw Error("state space: idiosyncratic variances must be positive");
        const Vector w = p.base.sigma2.cwiseInverse();
        wl_full_ = w.asDiagonal() * p.base.lambda;
        b_full_ = p.base.lambda.transpose() * wl_full_;
        logdet_full_ = p.base.sigma2.array().log().sum();
    }

    ObsBlock at(Index t) const {
        const Index N = centered_.N(), r = p_.r();
        ObsBlock ob;
        for (Index i = 0; i < N; ++i)
            if (centered_.mask(t, i)) ob.rows.push_back(i);
        const Index n = static_cast<Index>(ob.rows.size());
        ob.lambda.resize(n, r);
        ob.sigma2.resize(n);
        ob.x.resize(n);
        for (Index k = 0; k < n; ++k) {
            const Index i = ob.rows[k];
            ob.lambda.row(k) = p_.base.lambda.row(i);
            ob.sigma2(k) = p_.base.sigma2(i);
            ob.x(k) = centered_.values(t, i);
        }
        if (n == N) {
            ob.b = b_full_;
            ob.u = wl_full_.transpose() * ob.x;
            ob.logdet_sigma = logdet_full_;
        } else {
            const Matrix wl = ob.sigma2.cwiseInverse().asDiagonal() * ob.lambda;
            ob.b = ob.lambda.transpose() * wl;
            ob.u = wl.transpose() * ob.x;
            ob.logdet_sigma = ob.sigma2.array().log().sum();
        }
        ob.q = ob.x.cwiseAbs2().cwiseQuotient(ob.sigma2).sum();
        return ob;
    }

private:
    const Panel& centered_;
    const DynamicParams& p_;
    Matrix wl_full_;
    Matrix b_full_;
    double logdet_full_ = 0.0;
};

double rel_asymmetry(const Matrix& m) {
    const double s = m.cwiseAbs().maxCoeff();
    return s > 0.0 ? (m - m.transpose()).cwiseAbs().maxCoeff() / s : 0.0;
}

double logdet_llt(const Eigen::LLT<Matrix>& llt) {
    return 2.0 * Vector(llt.matrixLLT().diagonal()).array().log().sum();
}

void check_params(const DynamicParams& p) {
    const Index r = p.r();
    if (p.a_mat.rows() != r || p.a_mat.cols() != r || p.h_mat.rows() != r || p.h_mat.cols() != r)
        throw Error("state space: transition matrices must be r x r");
}

}  // namespace

FilterOutput kalman_filter(const Panel& centered, const DynamicParams& params, FilterVariant variant) {
    FilterOptions opts;
    opts.variant = variant;
    return kalman_filter(centered, params, opts);
}

FilterOutput kalman_filter(const Panel& centered, const DynamicParams& params, const FilterOptions& opts) {
    check_params(params);
    const Index T = centered.T(), N = centered.N(), r = params.r();
    const Matrix& a = params.a_mat;
    const Matrix q = params.h_mat * params.h_mat.transpose();
    const ObsCache cache(centered, params);

    FilterOutput out;
    out.variant = opts.variant;
    if (out.variant == FilterVariant::automatic)
        out.variant = N > 2 * r ? FilterVariant::woodbury : FilterVariant::standard;
    out.p00 = opts.init_cov ? *opts.init_cov : Matrix(opts.init_scale * Matrix::Identity(r, r));
    if (out.p00.rows() != r || out.p00.cols() != r) throw Error("kalman_filter: initial covariance must be r x r");

    out.f_pred.resize(T, r);
    out.f_filt.resize(T, r);
    out.p_pred.resize(T);
    out.p_filt.resize(T);

    Vector f = Vector::Zero(r);
    Matrix p = out.p00;
    double ll = 0.0;
    for (Index t = 0; t < T; ++t) {
        Vector fp = a * f;
        Matrix pp = a * p * a.transpose() + q;
        out.max_asymmetry = std::max(out.max_asymmetry, rel_asymmetry(pp));
        pp = symmetrize(pp);
        out.f_pred.row(t) = fp.transpose();
        out.p_pred[t] = pp;

        const ObsBlock ob = cache.at(t);
        const Index n = static_cast<Index>(ob.rows.size());
        if (n == 0) {
            f = fp;
            p = pp;
        } else if (out.variant == FilterVariant::standard) {
            Matrix s = ob.lambda * pp * ob.lambda.transpose();
            s.diagonal() += ob.sigma2;
            Eigen::LLT<Matrix> llt(symmetrize(s));
            if (llt.info() != Eigen::Success)
                throw Error("kalman_filter: innovation covariance singular at t=" + std::to_string(t + 1));
            const Vector v = ob.x - ob.lambda * fp;
            const Matrix k = llt.solve(ob.lambda * pp).transpose();  // P L' S^-1
            f = fp + k * v;
            p = pp - k * ob.lambda * pp;
            ll -= 0.5 * (static_cast<double>(n) * kLog2Pi + logdet_llt(llt) + v.dot(llt.solve(v)));
        } else {
            Eigen::LLT<Matrix> pllt(pp);
            if (pllt.info() != Eigen::Success)
                throw Error("kalman_filter: predicted covariance singular at t=" + std::to_string(t + 1));
            const Matrix pinv = pllt.solve(Matrix::Identity(r, r));
            Eigen::LLT<Matrix> mllt(symmetrize(ob.b + pinv));
            if (mllt.info() != Eigen::Success)
                throw Error("kalman_filter: innovation covariance singular at t=" + std::to_string(t + 1));
            const Vector w = ob.u - ob.b * fp;  // L' Sigma^-1 v
            const Vector gain = mllt.solve(w);
            f = fp + gain;
            p = pp - mllt.solve(ob.b * pp);
            const double vsv = ob.q - 2.0 * fp.dot(ob.u) + fp.dot(ob.b * fp);
            const double logdet_s = ob.logdet_sigma + logdet_llt(pllt) + logdet_llt(mllt);
            ll -= 0.5 * (static_cast<double>(n) * kLog2Pi + logdet_s + vsv - w.dot(gain));
        }
        out.max_asymmetry = std::max(out.max_asymmetry, rel_asymmetry(p));
        p = symmetrize(p);
        out.f_filt.row(t) = f.transpose();
        out.p_filt[t] = p;
    }
    if (!std::isfinite(ll)) throw Error("kalman_filter: log-likelihood is not finite");
    out.loglik = ll;
    return out;
}

SmootherOutput kalman_smoother(const FilterOutput& kf, const Panel& centered, const DynamicParams& params,
                               SmootherVariant variant) {
    check_params(params);
    const Index T = centered.T(), r = params.r();
    if (kf.f_filt.rows() != T) throw Error("kalman_smoother: filter output does not match the panel");
    const Matrix& a = params.a_mat;
    const Matrix ident = Matrix::Identity(r, r);

    SmootherOutput out;
    out.loglik = kf.loglik;
    out.f_smooth.resize(T, r);
    out.p_smooth.resize(T);
    out.c_lag.resize(T > 0 ? T - 1 : 0);

    if (variant == SmootherVariant::standard) {
        auto gain = [&](const Matrix& pf, const Matrix& pp_next, Index t) {
            Eigen::LLT<Matrix> llt(pp_next);
            if (llt.info() != Eigen::Success)
                throw Error("kalman_smoother: predicted covariance singular at t=" + std::to_string(t + 1) +
                            "; use the dk variant");
            return Matrix(llt.solve(a * pf).transpose());  // P_{t|t} A' P_{t+1|t}^-1
        };
        out.f_smooth.row(T - 1) = kf.f_filt.row(T - 1);
        out.p_smooth[T - 1] = kf.p_filt[T - 1];
        for (Index t = T - 2; t >= 0; --t) {
            const Matrix j = gain(kf.p_filt[t], kf.p_pred[t + 1], t + 1);
            out.f_smooth.row(t) =
                kf.f_filt.row(t) + (j * (out.f_smooth.row(t + 1) - kf.f_pred.row(t + 1)).transpose()).transpose();
            out.p_smooth[t] = symmetrize(kf.p_filt[t] + j * (out.p_smooth[t + 1] - kf.p_pred[t + 1]) * j.transpose());
            out.c_lag[t] = out.p_smooth[t + 1] * j.transpose();
        }
        const Matrix j0 = gain(kf.p00, kf.p_pred[0], 0);
        out.f0 = j0 * (out.f_smooth.row(0) - kf.f_pred.row(0)).transpose();
        out.p0 = symmetrize(kf.p00 + j0 * (out.p_smooth[0] - kf.p_pred[0]) * j0.transpose());
        out.c10 = out.p_smooth[0] * j0.transpose();
        return out;
    }

    const ObsCache cache(centered, params);
    Vector r_cur = Vector::Zero(r);
    Matrix n_cur = Matrix::Zero(r, r);
    for (Index t = T - 1; t >= 0; --t) {
        const Matrix& pp = kf.p_pred[t];
        const Vector fp = kf.f_pred.row(t).transpose();
        const ObsBlock ob = cache.at(t);
        Matrix lsl = Matrix::Zero(r, r);  // L' S^-1 L
        Vector lsv = Vector::Zero(r);     // L' S^-1 v
        if (!ob.rows.empty()) {
            const Eigen::PartialPivLU<Matrix> lu(ident + ob.b * pp);
            lsl = lu.solve(ob.b);
            lsv = lu.solve(ob.u - ob.b * fp);
        }
        const Matrix l = a * (ident - pp * lsl);
        if (t < T - 1) out.c_lag[t] = (pp * l.transpose() * (ident - n_cur * kf.p_pred[t + 1])).transpose();
        r_cur = lsv + l.transpose() * r_cur;
        n_cur = symmetrize(lsl + l.transpose() * n_cur * l);
        out.f_smooth.row(t) = (fp + pp * r_cur).transpose();
        out.p_smooth[t] = symmetrize(pp - pp * n_cur * pp);
    }
    const Matrix& p00 = kf.p00;
    out.f0 = p00 * a.transpose() * r_cur;
    out.p0 = symmetrize(p00 - p00 * a.transpose() * n_cur * a * p00);
    out.c10 = (p00 * a.transpose() * (ident - n_cur * kf.p_pred[0])).transpose();
    return out;
}

Matrix stationary_factor_cov(const Matrix& a, const Matrix& q) {
    const Index r = a.rows();
    if (spectral_radius(a) >= 1.0) throw Error("stationary_factor_cov: transition is not stable");
    Matrix kron(r * r, r * r);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < r; ++j) kron.block(i * r, j * r, r, r) = a(i, j) * a;
    const Matrix sys = Matrix::Identity(r * r, r * r) - kron;
    const Vector vq = Eigen::Map<const Vector>(q.data(), r * r);
    const Vector vg = sys.partialPivLu().solve(vq);
    return symmetrize(Eigen::Map<const Matrix>(vg.data(), r, r));
}

SmootherOutput direct_smoother(const Panel& centered, const DynamicParams& params, const DirectOptions& opts) {
    check_params(params);
    const Index T = centered.T(), N = centered.N(), r = params.r();
    if (r * T > 500) throw Error("direct_smoother: r*T exceeds 500");
    const Matrix& a = params.a_mat;
    const Matrix q = params.h_mat * params.h_mat.transpose();

    std::vector<Matrix> var(T);
    if (opts.init_cov) {
        var[0] = a * (*opts.init_cov) * a.transpose() + q;
        for (Index t = 1; t < T; ++t) var[t] = a * var[t - 1] * a.transpose() + q;
    } else {
        const Matrix g0 = stationary_factor_cov(a, q);
        for (Index t = 0; t < T; ++t) var[t] = g0;
    }
    const Index rt = r * T;
    Matrix omega(rt, rt);
    for (Index s = 0; s < T; ++s) {
        Matrix blk = var[s];
        for (Index t = s; t < T; ++t) {
            omega.block(t * r, s * r, r, r) = blk;
            omega.block(s * r, t * r, r, r) = blk.transpose();
            blk = a * blk;
        }
    }

    std::vector<std::pair<Index, Index>> obs;
    for (Index t = 0; t < T; ++t)
        for (Index i = 0; i < N; ++i)
            if (centered.mask(t, i)) obs.emplace_back(t, i);
    const Index n = static_cast<Index>(obs.size());
    Matrix load = Matrix::Zero(n, rt);
    Vector y(n), d(n);
    for (Index k = 0; k < n; ++k) {
        const auto [t, i] = obs[k];
        load.block(k, t * r, 1, r) = params.base.lambda.row(i);
        y(k) = centered.values(t, i);
        d(k) = params.base.sigma2(i);
    }

    SmootherOutput out;
    out.f_smooth.resize(T, r);
    out.p_smooth.resize(T);
    out.c_lag.resize(T - 1);
    Matrix cov = omega;
    Vector mean = Vector::Zero(rt);
    if (n > 0) {
        Matrix sy = load * omega * load.transpose();
        sy.diagonal() += d;
        Eigen::LLT<Matrix> llt(symmetrize(sy));
        if (llt.info() != Eigen::Success) throw Error("direct_smoother: observation covariance is singular");
        const Matrix ol = omega * load.transpose();
        mean = ol * llt.solve(y);
        cov = symmetrize(omega - ol * llt.solve(ol.transpose()));
        out.loglik = -0.5 * (static_cast<double>(n) * kLog2Pi + logdet_llt(llt) + y.dot(llt.solve(y)));
    }
    for (Index t = 0; t < T; ++t) {
        out.f_smooth.row(t) = mean.segment(t * r, r).transpose();
        out.p_smooth[t] = cov.block(t * r, t * r, r, r);
        if (t + 1 < T) out.c_lag[t] = cov.block((t + 1) * r, t * r, r, r);
    }
    return out;
}

Panel impute_missing_sw(const Panel& panel, Index r, Index max_iter, double tol) {
    const Index T = panel.T(), N = panel.N();
    for (Index i = 0; i < N; ++i)
        if (panel.observed_count(i) == 0) throw Error("impute: series '" + panel.names[i] + "' has no observations");
    for (Index t = 0; t < T; ++t)
        if (!panel.mask.row(t).any()) throw Error("impute: period " + std::to_string(t + 1) + " has no observations");
    if (panel.complete()) return panel;

    const Demeaned dm = demean(panel);
    Panel filled = panel;
    for (Index t = 0; t < T; ++t)
        for (Index i = 0; i < N; ++i)
            if (!panel.mask(t, i)) filled.values(t, i) = dm.alpha_hat(i);
    filled.mask.setConstant(true);

    bool converged = false;
    for (Index k = 0; k < max_iter; ++k) {
        const PcFit pc = pc_fit(filled, r);
        const Matrix fitted =
            (pc.factors.values * pc.params.lambda.transpose()).rowwise() + pc.params.alpha.transpose();
        double diff = 0.0, base = 0.0;
        for (Index t = 0; t < T; ++t) {
            for (Index i = 0; i < N; ++i) {
                if (panel.mask(t, i)) continue;
                const double old = filled.values(t, i);
                diff += (fitted(t, i) - old) * (fitted(t, i) - old);
                base += old * old;
                filled.values(t, i) = fitted(t, i);
            }
        }
        if (std::sqrt(diff) <= tol * std::max(std::sqrt(base), 1e-300)) {
            converged = true;
            break;
        }
    }
    if (!converged) warn("impute: no convergence within max_iter; returning last iterate");
    return filled;
}

}  // namespace dfm
