#pragma once

#include "dfm/core.hpp"
#include "dfm/ssm.hpp"

#include <vector>

namespace dfm {

// Smoothed moments summed over t = 1..T. Lagged sums pair F_1 with the pre-sample state F_0.
struct SuffStats {
    Matrix ff;       // sum E[F_t F_t']
    Matrix ff_lag;   // sum E[F_t F_{t-1}']
    Matrix ff_prev;  // sum E[F_{t-1} F_{t-1}']
    std::vector<Matrix> second;  // per-t E[F_t F_t']
};

struct EStep {
    SmootherOutput smoother;
    SuffStats stats;
};

struct EmOptions {
    Index max_iter = 200;
    double tol = 1e-6;
    double monotone_slack = 1e-6;
    FilterOptions filter;
    SmootherVariant smoother = SmootherVariant::dk;
};

struct DynamicEmFit {
    DynamicParams params;
    SmootherOutput smoother;
    Matrix f_filt;
    std::vector<double> loglik_trace;
    Index iterations = 0;
    bool converged = false;
    double max_spectral_radius = 0.0;
};

DynamicParams em_initialize(const Panel& panel, Index r);

SuffStats accumulate_moments(const SmootherOutput& sm);
EStep em_estep(const Panel& centered, const DynamicParams& params, const EmOptions& opts = {});
DynamicParams em_mstep(const Panel& centered, const SuffStats& stats, const Matrix& f_smooth,
                       const Vector& alpha, const Vector& sigma2_floor);

DynamicEmFit em_fit(const Panel& panel, Index r, const EmOptions& opts = {});
DynamicEmFit em_fit(const Panel& panel, Index r, Index max_iter, double tol);

// Re-express a fitted system under lambda -> lambda R, F_t -> R^{-1} F_t.
void rotate_system(DynamicEmFit& fit, const Matrix& rotation);

}  // namespace dfm
