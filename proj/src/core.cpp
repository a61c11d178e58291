#include "dfm/core.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>

namespace dfm {

namespace {

std::atomic<std::size_t> g_warnings{0};
std::atomic<bool> g_muted{false};

bool lex_less(const Vector& a, const Vector& b) {
    for (Index i = 0; i < a.size(); ++i) {
        if (a(i) < b(i)) return true;
        if (a(i) > b(i)) return false;
    }
    return false;
}

void normalize_sign(Vector& v) {
    const double scale = v.cwiseAbs().maxCoeff();
    for (Index i = 0; i < v.size(); ++i) {
        if (std::abs(v(i)) > 1e-12 * scale) {
            if (v(i) < 0) v = -v;
            return;
        }
    }
}

}  // namespace

void warn(const std::string& msg) {
    static const std::shared_ptr<spdlog::logger> sink = spdlog::stderr_color_mt("dfm");
    ++g_warnings;
    if (!g_muted.load()) sink->warn("{}", msg);
}

void mute_warnings(bool muted) { g_muted.store(muted); }

std::size_t warning_count() { return g_warnings.load(); }

const char* to_string(FactorMethod m) {
    switch (m) {
        case FactorMethod::OLS: return "OLS";
        case FactorMethod::PC: return "PC";
        case FactorMethod::WLS: return "WLS";
        case FactorMethod::LP: return "LP";
        case FactorMethod::KF: return "KF";
        case FactorMethod::KS: return "KS";
        case FactorMethod::GLS0: return "GLS0";
        case FactorMethod::DIRECT: return "DIRECT";
    }
    return "?";
}

Panel Panel::from_matrix(Matrix values, std::vector<std::string> names,
                         std::vector<std::string> time_index) {
    Panel p;
    p.mask = values.array().isFinite();
    p.values = std::move(values);
    if (names.empty()) {
        for (Index i = 0; i < p.N(); ++i) names.push_back("x" + std::to_string(i + 1));
    }
    if (time_index.empty()) {
        for (Index t = 0; t < p.T(); ++t) time_index.push_back(std::to_string(t + 1));
    }
    p.names = std::move(names);
    p.time_index = std::move(time_index);
    p.validate();
    return p;
}

void Panel::validate() const {
    if (T() < 2) throw Error("panel needs at least 2 time periods");
    if (N() < 1) throw Error("panel needs at least 1 series");
    if (mask.rows() != T() || mask.cols() != N()) throw Error("mask dimensions differ from values");
    if (static_cast<Index>(names.size()) != N()) throw Error("series name count differs from N");
    if (!time_index.empty() && static_cast<Index>(time_index.size()) != T())
        throw Error("time index length differs from T");
}

Demeaned demean(const Panel& panel) {
    const Index T = panel.T(), N = panel.N();
    Demeaned out;
    out.alpha_hat.resize(N);
    out.centered = panel;
    for (Index i = 0; i < N; ++i) {
        double sum = 0.0;
        Index n = 0;
        for (Index t = 0; t < T; ++t) {
            if (panel.mask(t, i)) {
                sum += panel.values(t, i);
                ++n;
            }
        }
        if (n == 0) throw Error("series '" + panel.names[i] + "' has no observed values");
        const double m = sum / static_cast<double>(n);
        out.alpha_hat(i) = m;
        for (Index t = 0; t < T; ++t) {
            out.centered.values(t, i) =
                panel.mask(t, i) ? panel.values(t, i) - m : std::numeric_limits<double>::quiet_NaN();
        }
    }
    return out;
}

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

Matrix spd_solve(const Matrix& a, const Matrix& b, const std::string& what) {
    Eigen::LLT<Matrix> llt(symmetrize(a));
    if (llt.info() != Eigen::Success || !a.allFinite()) throw Error(what + " is singular or indefinite");
    const Vector d = Vector(llt.matrixLLT().diagonal()).array().square();
    if (d.minCoeff() <= 1e-13 * d.maxCoeff()) throw Error(what + " is numerically singular");
    return llt.solve(b);
}

Matrix spd_inverse(const Matrix& a, const std::string& what) {
    return spd_solve(a, Matrix::Identity(a.rows(), a.cols()), what);
}

double spectral_radius(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    Eigen::EigenSolver<Matrix> es(m, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

Matrix sym_sqrt(const Matrix& spd) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(spd));
    Vector d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

Matrix sym_inv_sqrt(const Matrix& spd) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(spd));
    if (es.eigenvalues().minCoeff() <= 0.0) throw Error("matrix is not positive definite");
    Vector d = es.eigenvalues().cwiseSqrt().cwiseInverse();
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

Matrix psd_cholesky(const Matrix& m, double eig_floor) {
    const Matrix s = symmetrize(m);
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() == Eigen::Success && Vector(llt.matrixLLT().diagonal()).minCoeff() > std::sqrt(eig_floor))
        return llt.matrixL();
    Eigen::SelfAdjointEigenSolver<Matrix> es(s);
    if (es.eigenvalues().minCoeff() < eig_floor) warn("psd_cholesky: eigenvalues floored at " + std::to_string(eig_floor));
    const Vector d = es.eigenvalues().cwiseMax(eig_floor);
    const Matrix fixed = symmetrize(es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose());
    Eigen::LLT<Matrix> llt2(fixed);
    if (llt2.info() != Eigen::Success) throw Error("psd_cholesky: factorization failed");
    return llt2.matrixL();
}

EigenPair top_eigen(const Matrix& sym, Index r, const Tolerances& tol) {
    const Index n = sym.rows();
    if (sym.cols() != n) throw Error("top_eigen: matrix is not square");
    if (r < 1 || r > n) throw Error("top_eigen: r must lie in [1, N]");
    if (!sym.allFinite()) throw Error("top_eigen: non-finite entries");
    const double scale = std::max(1.0, sym.cwiseAbs().maxCoeff());
    if ((sym - sym.transpose()).cwiseAbs().maxCoeff() > tol.symmetry * scale)
        throw Error("top_eigen: matrix is not symmetric");

    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(sym));
    if (es.info() != Eigen::Success) throw Error("top_eigen: eigensolver failed");

    std::vector<Index> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<Vector> vecs(n);
    for (Index j = 0; j < n; ++j) {
        vecs[j] = es.eigenvectors().col(j);
        normalize_sign(vecs[j]);
    }
    const Vector& ev = es.eigenvalues();
    const double tie_gap = tol.tie * std::max(1.0, ev.cwiseAbs().maxCoeff());
    bool tied = false;
    std::sort(order.begin(), order.end(), [&](Index a, Index b) {
        if (std::abs(ev(a) - ev(b)) > tie_gap) return ev(a) > ev(b);
        return lex_less(vecs[b], vecs[a]);
    });
    for (Index j = 0; j + 1 < r + (r < n ? 1 : 0); ++j) {
        if (std::abs(ev(order[j]) - ev(order[j + 1])) <= tie_gap) tied = true;
    }
    if (tied) warn("top_eigen: tied eigenvalues among the leading pairs; ordering is lexicographic");

    EigenPair out;
    out.eigvals.resize(r);
    out.eigvecs.resize(n, r);
    for (Index j = 0; j < r; ++j) {
        out.eigvals(j) = ev(order[j]);
        out.eigvecs.col(j) = vecs[order[j]];
    }
    return out;
}

Vector enforce_sign_convention(Matrix& lambda, Matrix* factors) {
    Vector signs = Vector::Ones(lambda.cols());
    for (Index j = 0; j < lambda.cols(); ++j) {
        const double scale = lambda.col(j).cwiseAbs().maxCoeff();
        for (Index i = 0; i < lambda.rows(); ++i) {
            if (std::abs(lambda(i, j)) > 1e-12 * scale) {
                if (lambda(i, j) < 0) signs(j) = -1.0;
                break;
            }
        }
        if (signs(j) < 0) {
            lambda.col(j) *= -1.0;
            if (factors) factors->col(j) *= -1.0;
        }
    }
    return signs;
}

Identified identify_rotation(const Matrix& loadings_raw, const Matrix& factors_raw,
                             const Tolerances& tol) {
    const Index r = loadings_raw.cols();
    const Index T = factors_raw.rows();
    if (factors_raw.cols() != r) throw Error("identify_rotation: loadings and factors disagree on r");
    if (T < r) throw Error("identify_rotation: T < r");

    const Matrix gram = symmetrize(factors_raw.transpose() * factors_raw / static_cast<double>(T));
    Eigen::SelfAdjointEigenSolver<Matrix> gs(gram);
    const double gmax = gs.eigenvalues().cwiseAbs().maxCoeff();
    if (gmax <= 0.0 || gs.eigenvalues().minCoeff() <= tol.rank * gmax)
        throw Error("identify_rotation: factors are rank deficient");
    const Matrix q = gs.eigenvectors() * gs.eigenvalues().cwiseSqrt().asDiagonal() *
                     gs.eigenvectors().transpose();
    const Matrix q_inv = gs.eigenvectors() * gs.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                         gs.eigenvectors().transpose();

    // Non-zero spectrum of the common-component covariance, via the r x r form.
    const Matrix m = symmetrize(q * loadings_raw.transpose() * loadings_raw * q);
    Eigen::SelfAdjointEigenSolver<Matrix> ms(m);
    Vector d = ms.eigenvalues().reverse();
    Matrix w = ms.eigenvectors().rowwise().reverse();
    const double dmax = d.cwiseAbs().maxCoeff();
    if (dmax <= 0.0 || d(r - 1) <= tol.rank * dmax)
        throw Error("identify_rotation: common component is rank deficient");
    for (Index j = 0; j + 1 < r; ++j) {
        if (d(j) - d(j + 1) <= tol.tie * dmax) {
            warn("identify_rotation: near-tied common-component eigenvalues");
            break;
        }
    }

    Matrix rot = q * w;
    Matrix lambda = loadings_raw * rot;
    Vector signs = enforce_sign_convention(lambda);
    rot = rot * signs.asDiagonal();

    Identified out;
    out.lambda = std::move(lambda);
    out.factors = factors_raw * q_inv * w * signs.asDiagonal();
    out.rotation = std::move(rot);
    return out;
}

Matrix Alignment::apply(const Matrix& m) const {
    Matrix out(m.rows(), static_cast<Index>(source.size()));
    for (std::size_t j = 0; j < source.size(); ++j) out.col(j) = sign[j] * m.col(source[j]);
    return out;
}

namespace {

double correlation(const Vector& a, const Vector& b) {
    const Vector ac = a.array() - a.mean();
    const Vector bc = b.array() - b.mean();
    const double na = ac.norm(), nb = bc.norm();
    if (na > 1e-14 * std::max(1.0, a.norm()) && nb > 1e-14 * std::max(1.0, b.norm()))
        return ac.dot(bc) / (na * nb);
    const double den = a.norm() * b.norm();
    return den > 0.0 ? a.dot(b) / den : 0.0;
}

}  // namespace

Alignment alignment_for(const Matrix& estimate, const Matrix& truth) {
    if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
        throw Error("align_columns: dimension mismatch");
    const Index r = truth.cols();
    std::vector<Index> order(r);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return truth.col(a).norm() > truth.col(b).norm(); });

    Alignment al;
    al.source.assign(r, 0);
    al.sign.assign(r, 1.0);
    std::vector<bool> used(r, false);
    for (Index j : order) {
        Index best = -1;
        double best_abs = -1.0, best_corr = 0.0;
        for (Index k = 0; k < r; ++k) {
            if (used[k]) continue;
            const double c = correlation(estimate.col(k), truth.col(j));
            if (std::abs(c) > best_abs) {
                best_abs = std::abs(c);
                best_corr = c;
                best = k;
            }
        }
        used[best] = true;
        al.source[j] = best;
        al.sign[j] = best_corr < 0 ? -1.0 : 1.0;
    }
    return al;
}

Matrix align_columns(const Matrix& estimate, const Matrix& truth) {
    return alignment_for(estimate, truth).apply(estimate);
}

Vector column_mse(const Matrix& estimate, const Matrix& truth) {
    if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
        throw Error("column_mse: dimension mismatch");
    return (estimate - truth).array().square().colwise().mean().transpose();
}

}  // namespace dfm
