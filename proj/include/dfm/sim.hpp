#pragma once

#include "dfm/core.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dfm {

enum class NoiseScale {
    theta,  // phi_i calibrated so that the idiosyncratic share of series i is theta_i
    unit,   // phi_i = 1
    none    // phi_i = 0, noiseless common component
};

struct DgpConfig {
    Index n = 100;
    Index t = 100;
    Index r = 2;
    double tau = 0.0;
    double delta = 0.0;
    Index band = 10;
    double theta_lo = 0.25;
    double theta_hi = 0.5;
    Index b_reps = 500;
    std::uint64_t seed = 20240601;
    Index burn_in = 200;
    NoiseScale noise = NoiseScale::theta;

    void validate() const;
};

struct SimTruth {
    Panel panel;
    Matrix lambda_true;
    Matrix f_true;
    Matrix chi_true;
    DynamicParams dyn;
    Vector phi;
    Vector theta;
    Vector ar_coef;
    Matrix a_raw;  // transition before the identification rotation
};

// Independent engine for replication rep_index of a run seeded with seed.
std::mt19937_64 replication_engine(std::uint64_t seed, std::uint64_t rep_index);

SimTruth simulate(const DgpConfig& config, std::uint64_t rep_index);

enum class Chain : unsigned { ols = 1, pc = 2, qml = 4, em = 8 };

struct EstimatorSet {
    unsigned bits = 0;

    EstimatorSet& add(Chain c) {
        bits |= static_cast<unsigned>(c);
        return *this;
    }
    bool has(Chain c) const { return (bits & static_cast<unsigned>(c)) != 0; }
    bool empty() const { return bits == 0; }
    static EstimatorSet all() { return EstimatorSet{15u}; }
    static EstimatorSet parse(const std::string& csv);
};

enum class Table { loadings, factors };

struct McCell {
    Table table = Table::loadings;
    std::string estimator;
    Vector mse_mean;
    Vector mse_sd;
    Index count = 0;
    Index failures = 0;
    std::vector<Vector> samples;  // per replication, in replication order; empty rows for failures
};

struct McReport {
    DgpConfig config;
    std::vector<McCell> cells;
    double wall_seconds = 0.0;
    Index threads = 1;

    const McCell& cell(Table table, const std::string& estimator) const;
};

McReport run_monte_carlo(const DgpConfig& config, EstimatorSet estimators, Index threads = 1);

// Tables of means, one row per report: n,t,tau,delta then estimator columns by factor column,
// then the matching standard deviations.
std::string report_csv(const std::vector<McReport>& reports, Table table);

Index threads_from_env(Index fallback = 1);

}  // namespace dfm
