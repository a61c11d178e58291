#pragma once

#include "dfm/core.hpp"
#include "dfm/sim.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfm {

// Inconsistent or incomplete command configuration; maps to exit code 1.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Command { fit, simulate, montecarlo, nfactors, bands, impute };

struct RunConfig {
    Command command = Command::fit;
    std::filesystem::path input;
    std::filesystem::path output_dir = ".";
    std::filesystem::path output_file;  // impute

    std::string method = "em";  // pc | qml | em | iter
    Index r = 2;
    Index r_max = 8;
    bool standardize = true;
    Index max_iter = 200;
    double tol = 1e-6;
    double init_scale = 1e3;
    bool sidecar = false;

    // simulate / montecarlo
    DgpConfig dgp;
    std::uint64_t rep_index = 0;
    std::vector<Index> grid_n;
    std::vector<Index> grid_t;
    std::vector<double> grid_tau;
    std::vector<double> grid_delta;
    std::string estimators = "ols,pc,qml,em";
    Index threads = 0;  // 0: DFM_THREADS or hardware concurrency

    // bands
    double level = 0.95;
    std::vector<std::string> series;
    Index half_band = 0;
    std::optional<Index> bandwidth;
    std::string weights = "ols";
    bool plot = false;

    void validate() const;
};

// Each returns 0 on success and throws UsageError or Error otherwise.
int cmd_fit(const RunConfig& cfg);
int cmd_simulate(const RunConfig& cfg);
int cmd_montecarlo(const RunConfig& cfg);
int cmd_nfactors(const RunConfig& cfg);
int cmd_bands(const RunConfig& cfg);
int cmd_impute(const RunConfig& cfg);

int dispatch(const RunConfig& cfg);

// Parses arguments (and an optional --config TOML file; flags win) and runs the command.
// Exit codes: 0 ok, 1 usage error, 2 estimation error.
int run_cli(int argc, char** argv);

struct Standardized {
    Panel panel;
    Vector mean;
    Vector scale;
};

// Per-series observed mean and T-divisor standard deviation; zero-variance series keep scale 1.
Standardized standardize_panel(const Panel& panel);

std::string band_svg(const std::string& series, const std::vector<std::string>& time_index, const Vector& center,
                     const Vector& lower, const Vector& upper);

}  // namespace dfm
