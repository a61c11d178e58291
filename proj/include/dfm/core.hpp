#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// T x N observations, rows are time. Missing cells hold NaN and mask == false.
struct Panel {
    Matrix values;
    Mask mask;
    std::vector<std::string> names;
    std::vector<std::string> time_index;

    Index T() const { return values.rows(); }
    Index N() const { return values.cols(); }
    bool complete() const { return mask.all(); }
    Index observed_count(Index col) const { return mask.col(col).count(); }

    static Panel from_matrix(Matrix values, std::vector<std::string> names = {},
                             std::vector<std::string> time_index = {});
    void validate() const;
};

struct StaticParams {
    Vector alpha;
    Matrix lambda;
    Vector sigma2;

    Index r() const { return lambda.cols(); }
    Index N() const { return lambda.rows(); }
};

struct DynamicParams {
    StaticParams base;
    Matrix a_mat;
    Matrix h_mat;  // lower triangular

    Index r() const { return base.r(); }
};

enum class FactorMethod { OLS, PC, WLS, LP, KF, KS, GLS0, DIRECT };

const char* to_string(FactorMethod m);

struct FactorPath {
    Matrix values;
    FactorMethod method = FactorMethod::PC;
};

struct EigenPair {
    Vector eigvals;  // descending
    Matrix eigvecs;
};

struct Tolerances {
    double symmetry = 1e-10;
    double rank = 1e-10;
    double tie = 1e-10;
};

struct Demeaned {
    Vector alpha_hat;
    Panel centered;
};

Demeaned demean(const Panel& panel);

EigenPair top_eigen(const Matrix& sym, Index r, const Tolerances& tol = {});

struct Identified {
    Matrix lambda;
    Matrix factors;
    // lambda = loadings_raw * rotation, factors = factors_raw * rotation^{-T}
    Matrix rotation;
};

Identified identify_rotation(const Matrix& loadings_raw, const Matrix& factors_raw,
                             const Tolerances& tol = {});

struct Alignment {
    std::vector<Index> source;  // estimate column feeding output column j
    std::vector<double> sign;

    Matrix apply(const Matrix& m) const;
};

Alignment alignment_for(const Matrix& estimate, const Matrix& truth);
Matrix align_columns(const Matrix& estimate, const Matrix& truth);

// Column sign fix: first non-negligible entry of each loading column positive.
// Returns the applied signs; factors (if given) are flipped alongside.
Vector enforce_sign_convention(Matrix& lambda, Matrix* factors = nullptr);

Matrix symmetrize(const Matrix& m);
// Solve a x = b for symmetric positive definite a; throws naming `what` when singular.
Matrix spd_solve(const Matrix& a, const Matrix& b, const std::string& what);
Matrix spd_inverse(const Matrix& a, const std::string& what);
double spectral_radius(const Matrix& m);
Matrix sym_sqrt(const Matrix& spd);
Matrix sym_inv_sqrt(const Matrix& spd);
// Lower Cholesky factor of the symmetrized input after flooring its eigenvalues.
Matrix psd_cholesky(const Matrix& m, double eig_floor = 1e-10);

// Per-column mean squared deviation.
Vector column_mse(const Matrix& estimate, const Matrix& truth);

void warn(const std::string& msg);
std::size_t warning_count();
// Warnings are still counted while muted.
void mute_warnings(bool muted);

}  // namespace dfm
