#include "dfm/cli.hpp"

#include "dfm/em_dynamic.hpp"
#include "dfm/inference.hpp"
#include "dfm/io.hpp"
#include "dfm/pca.hpp"
#include "dfm/ssm.hpp"
#include "dfm/static_qml.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace dfm {

namespace {

std::vector<std::string> numbered(const std::string& prefix, Index k) {
    std::vector<std::string> out;
    for (Index j = 1; j <= k; ++j) out.push_back(prefix + std::to_string(j));
    return out;
}

std::vector<std::string> with_label(const std::string& label, std::vector<std::string> cols) {
    cols.insert(cols.begin(), label);
    return cols;
}

std::vector<std::string> time_labels(const Panel& p) {
    if (!p.time_index.empty()) return p.time_index;
    std::vector<std::string> out;
    for (Index t = 1; t <= p.T(); ++t) out.push_back(std::to_string(t));
    return out;
}

void emit_matrix(const RunConfig& cfg, const std::string& stem, const std::vector<std::string>& header,
                 const std::vector<std::string>& rows, const Matrix& m) {
    write_matrix_csv(cfg.output_dir / (stem + ".csv"), header, rows, m);
    if (cfg.sidecar) write_sidecar(cfg.output_dir / (stem + ".bin"), m);
}

void ensure_output_dir(const RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) throw Error("cannot create output directory '" + cfg.output_dir.string() + "': " + ec.message());
}

Panel load_input(const RunConfig& cfg) {
    if (cfg.input.empty()) throw UsageError("--input is required");
    if (!fs::exists(cfg.input)) throw UsageError("input file '" + cfg.input.string() + "' does not exist");
    return ingest_csv(cfg.input);
}

void check_rank(const Panel& p, Index r) {
    if (r < 1 || r >= std::min(p.N(), p.T()))
        throw Error("r = " + std::to_string(r) + " must satisfy 1 <= r < min(N, T) = " +
                    std::to_string(std::min(p.N(), p.T())));
}

struct Prepared {
    Panel panel;  // standardized when requested
    Vector mean;
    Vector scale;
};

Prepared prepare(const Panel& raw, bool standardize) {
    if (!standardize) return {raw, Vector::Zero(raw.N()), Vector::Ones(raw.N())};
    Standardized s = standardize_panel(raw);
    return {std::move(s.panel), std::move(s.mean), std::move(s.scale)};
}

Panel complete_panel(const Panel& p, Index r) {
    if (p.complete()) return p;
    warn("panel has missing cells; imputing before estimation");
    return impute_missing_sw(p, r);
}

std::string kv(const std::string& k, const std::string& v) { return k + "," + v + "\n"; }

std::string file_stem(const std::string& name) {
    std::string out;
    for (char c : name) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
    return out.empty() ? "series" : out;
}

NoiseScale parse_noise(const std::string& s) {
    if (s == "theta") return NoiseScale::theta;
    if (s == "unit") return NoiseScale::unit;
    if (s == "none") return NoiseScale::none;
    throw UsageError("unknown noise scale '" + s + "' (expected theta, unit or none)");
}

}  // namespace

Standardized standardize_panel(const Panel& panel) {
    Demeaned dm = demean(panel);
    Standardized out{dm.centered, dm.alpha_hat, Vector::Ones(panel.N())};
    for (Index i = 0; i < panel.N(); ++i) {
        double ss = 0.0;
        const Index n = panel.observed_count(i);
        for (Index t = 0; t < panel.T(); ++t)
            if (panel.mask(t, i)) ss += dm.centered.values(t, i) * dm.centered.values(t, i);
        const double sd = n > 0 ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
        if (sd > 0.0) {
            out.scale(i) = sd;
            out.panel.values.col(i) /= sd;
        } else {
            warn("series '" + panel.names[i] + "' has zero variance; left unscaled");
        }
    }
    return out;
}

void RunConfig::validate() const {
    switch (command) {
        case Command::fit:
            if (input.empty()) throw UsageError("fit requires --input");
            if (method != "pc" && method != "qml" && method != "em" && method != "iter")
                throw UsageError("unknown method '" + method + "' (expected pc, qml, em or iter)");
            break;
        case Command::bands:
            if (input.empty()) throw UsageError("bands requires --input");
            if (!(level > 0.0 && level < 1.0)) throw UsageError("--level must lie in (0, 1)");
            if (weights != "ols" && weights != "wls") throw UsageError("--weights must be ols or wls");
            if (half_band < 0) throw UsageError("--half-band must be non-negative");
            break;
        case Command::nfactors:
            if (input.empty()) throw UsageError("nfactors requires --input");
            if (r_max < 1) throw UsageError("--r-max must be positive");
            break;
        case Command::impute:
            if (input.empty()) throw UsageError("impute requires --input");
            if (output_file.empty()) throw UsageError("impute requires --output");
            break;
        case Command::simulate:
        case Command::montecarlo:
            try {
                dgp.validate();
            } catch (const Error& e) {
                throw UsageError(e.what());
            }
            if (command == Command::montecarlo && EstimatorSet::parse(estimators).empty())
                throw UsageError("--estimators selects nothing");
            break;
    }
    if (max_iter < 1) throw UsageError("--max-iter must be positive");
    if (!(tol > 0.0)) throw UsageError("--tol must be positive");
}

int cmd_fit(const RunConfig& cfg) {
    cfg.validate();
    const Panel raw = load_input(cfg);
    check_rank(raw, cfg.r);
    ensure_output_dir(cfg);
    const Prepared prep = prepare(raw, cfg.standardize);
    const std::vector<std::string> fcols = numbered("f", cfg.r);
    const std::vector<std::string> times = time_labels(raw);

    StaticParams params;
    Matrix factors;
    double loglik = std::nan("");
    Index iterations = 0;
    bool converged = true;
    std::optional<DynamicParams> dyn;

    if (cfg.method == "em") {
        EmOptions opts;
        opts.max_iter = cfg.max_iter;
        opts.tol = cfg.tol;
        opts.filter.init_scale = cfg.init_scale;
        DynamicEmFit fit = em_fit(prep.panel, cfg.r, opts);
        params = fit.params.base;
        factors = fit.smoother.f_smooth;
        loglik = fit.loglik_trace.empty() ? loglik : fit.loglik_trace.back();
        iterations = fit.iterations;
        converged = fit.converged;
        dyn = fit.params;
    } else {
        const Panel work = complete_panel(prep.panel, cfg.r);
        const Panel centered = demean(work).centered;
        if (cfg.method == "pc") {
            PcFit fit = pc_fit(work, cfg.r);
            params = fit.params;
            factors = fit.factors.values;
        } else if (cfg.method == "qml") {
            StaticEmFit fit = static_em_fit(work, cfg.r, cfg.max_iter, cfg.tol);
            params = fit.params;
            factors = wls_factors(centered, params).values;
            iterations = fit.iterations;
            converged = fit.converged;
            emit_matrix(cfg, "factors_lp", with_label("t", fcols), times, lp_factors(centered, params).values);
        } else {
            IterativeFit fit = iterative_ols_wls(work, cfg.r, cfg.max_iter, cfg.tol);
            params = fit.params;
            factors = fit.factors.values;
            iterations = fit.iterations;
            converged = fit.converged;
        }
        loglik = static_loglik(centered.values, params);
    }

    // Share of the standardized (or raw) panel variance captured by the common component.
    const Panel centered = demean(prep.panel).centered;
    double total = 0.0, resid = 0.0;
    const Matrix chi = factors * params.lambda.transpose();
    for (Index t = 0; t < centered.T(); ++t)
        for (Index i = 0; i < centered.N(); ++i) {
            if (!centered.mask(t, i)) continue;
            const double x = centered.values(t, i);
            total += x * x;
            resid += (x - chi(t, i)) * (x - chi(t, i));
        }
    const double explained = total > 0.0 ? 1.0 - resid / total : 0.0;

    emit_matrix(cfg, "loadings", with_label("series", fcols), raw.names, params.lambda);
    emit_matrix(cfg, "factors", with_label("t", fcols), times, factors);
    Matrix s2(raw.N(), 1);
    s2.col(0) = params.sigma2;
    emit_matrix(cfg, "sigma2", {"series", "sigma2"}, raw.names, s2);
    Matrix ms(raw.N(), 2);
    ms.col(0) = prep.mean;
    ms.col(1) = prep.scale;
    emit_matrix(cfg, "scaling", {"series", "mean", "scale"}, raw.names, ms);
    if (dyn) {
        emit_matrix(cfg, "A", with_label("row", fcols), fcols, dyn->a_mat);
        emit_matrix(cfg, "H", with_label("row", fcols), fcols, dyn->h_mat);
    }

    std::string summary = "key,value\n";
    summary += kv("method", cfg.method);
    summary += kv("r", std::to_string(cfg.r));
    summary += kv("n", std::to_string(raw.N()));
    summary += kv("t", std::to_string(raw.T()));
    summary += kv("standardized", cfg.standardize ? "true" : "false");
    summary += kv("explained_variance", format_sig(explained));
    summary += kv("loglik", format_sig(loglik, 12));
    summary += kv("iterations", std::to_string(iterations));
    summary += kv("converged", converged ? "true" : "false");
    write_text(cfg.output_dir / "summary.csv", summary);
    if (!converged) warn("fit did not converge within " + std::to_string(cfg.max_iter) + " iterations");
    spdlog::info("fit({}) r={} explained_variance={} loglik={}", cfg.method, cfg.r, format_sig(explained),
                 format_sig(loglik, 12));
    return 0;
}

int cmd_simulate(const RunConfig& cfg) {
    cfg.validate();
    ensure_output_dir(cfg);
    const SimTruth truth = simulate(cfg.dgp, cfg.rep_index);
    emit_csv(truth.panel, cfg.output_dir / "panel.csv");
    const std::vector<std::string> fcols = numbered("f", cfg.dgp.r);
    emit_matrix(cfg, "truth_loadings", with_label("series", fcols), truth.panel.names, truth.lambda_true);
    emit_matrix(cfg, "truth_factors", with_label("t", fcols), time_labels(truth.panel), truth.f_true);
    emit_matrix(cfg, "truth_A", with_label("row", fcols), fcols, truth.dyn.a_mat);
    emit_matrix(cfg, "truth_H", with_label("row", fcols), fcols, truth.dyn.h_mat);
    std::cout << "seed=" << cfg.dgp.seed << " rep=" << cfg.rep_index << "\n";
    return 0;
}

int cmd_montecarlo(const RunConfig& cfg) {
    cfg.validate();
    ensure_output_dir(cfg);
    const EstimatorSet est = EstimatorSet::parse(cfg.estimators);
    Index threads = cfg.threads;
    if (threads < 1) threads = threads_from_env(std::max<Index>(1, std::thread::hardware_concurrency()));

    const auto pick = [](const auto& grid, auto fallback) {
        using V = std::decay_t<decltype(fallback)>;
        return grid.empty() ? std::vector<V>{fallback} : std::vector<V>(grid.begin(), grid.end());
    };
    const auto ns = pick(cfg.grid_n, cfg.dgp.n);
    const auto ts = pick(cfg.grid_t, cfg.dgp.t);
    const auto taus = pick(cfg.grid_tau, cfg.dgp.tau);
    const auto deltas = pick(cfg.grid_delta, cfg.dgp.delta);

    std::vector<McReport> reports;
    std::cout << "seed=" << cfg.dgp.seed << "\n";
    for (Index n : ns)
        for (Index t : ts)
            for (double tau : taus)
                for (double delta : deltas) {
                    DgpConfig d = cfg.dgp;
                    d.n = n;
                    d.t = t;
                    d.tau = tau;
                    d.delta = delta;
                    try {
                        d.validate();
                    } catch (const Error& e) {
                        throw UsageError(e.what());
                    }
                    McReport rep = run_monte_carlo(d, est, threads);
                    spdlog::info("montecarlo n={} t={} tau={} delta={} reps={} threads={} wall={:.2f}s", n, t,
                                 tau, delta, d.b_reps, rep.threads, rep.wall_seconds);
                    reports.push_back(std::move(rep));
                }
    write_text(cfg.output_dir / "mc_loadings.csv", report_csv(reports, Table::loadings));
    write_text(cfg.output_dir / "mc_factors.csv", report_csv(reports, Table::factors));
    return 0;
}

int cmd_nfactors(const RunConfig& cfg) {
    cfg.validate();
    const Panel raw = load_input(cfg);
    const Prepared prep = prepare(raw, cfg.standardize);
    const Index rmax = std::min(cfg.r_max, std::min(raw.N(), raw.T()) - 1);
    if (rmax < 1) throw Error("panel too small to select a factor count");
    const Panel work = complete_panel(prep.panel, rmax);
    const FactorCount fc = select_num_factors(work, rmax);
    if (!cfg.output_dir.empty() && cfg.output_dir != ".") ensure_output_dir(cfg);
    Matrix crit(static_cast<Index>(fc.criterion.size()), 1);
    for (Index k = 0; k < crit.rows(); ++k) crit(k, 0) = fc.criterion[k];
    emit_matrix(cfg, "nfactors", {"r", "ic_p2"}, numbered("", crit.rows()), crit);
    std::cout << "r_hat=" << fc.r_hat << "\n";
    return 0;
}

int cmd_bands(const RunConfig& cfg) {
    cfg.validate();
    const Panel raw = load_input(cfg);
    check_rank(raw, cfg.r);
    std::vector<Index> selected;
    if (cfg.series.empty()) {
        for (Index i = 0; i < raw.N(); ++i) selected.push_back(i);
    } else {
        for (const auto& s : cfg.series) {
            auto it = std::find(raw.names.begin(), raw.names.end(), s);
            if (it == raw.names.end()) {
                std::string avail;
                for (std::size_t k = 0; k < raw.names.size(); ++k) avail += (k ? ", " : "") + raw.names[k];
                throw UsageError("unknown series '" + s + "'; available: " + avail);
            }
            selected.push_back(static_cast<Index>(it - raw.names.begin()));
        }
    }
    ensure_output_dir(cfg);

    const Prepared prep = prepare(raw, cfg.standardize);
    const Panel work = complete_panel(prep.panel, cfg.r);
    const Panel centered = demean(work).centered;
    const PcFit fit = pc_fit(work, cfg.r);
    const CsWeights w = cfg.weights == "wls" ? CsWeights::wls : CsWeights::ols;
    const BandInputs in = band_covariances(centered.values, fit.params.lambda, fit.factors.values,
                                           fit.params.sigma2, w, cfg.bandwidth, cfg.half_band);
    const Bands b = common_component_bands(fit.params.lambda, fit.factors.values, in.loading, in.factor, cfg.level);

    const std::vector<std::string> times = time_labels(raw);
    std::ostringstream os;
    os << "series,t,center,lower,upper\n";
    for (Index i : selected) {
        const double s = prep.scale(i);
        const Vector c = b.center.col(i) * s;
        const Vector h = b.half_width.col(i) * s;
        for (Index t = 0; t < raw.T(); ++t)
            os << raw.names[i] << ',' << times[t] << ',' << format_sig(c(t)) << ',' << format_sig(c(t) - h(t)) << ','
               << format_sig(c(t) + h(t)) << '\n';
        if (cfg.plot)
            write_text(cfg.output_dir / ("band_" + file_stem(raw.names[i]) + ".svg"),
                       band_svg(raw.names[i], times, c, c - h, c + h));
    }
    write_text(cfg.output_dir / "bands.csv", os.str());
    spdlog::info("bands level={} z={} bandwidth={} half_band={}", cfg.level, format_sig(b.z, 7), in.loading.bandwidth,
                 in.factor.half_band);
    return 0;
}

int cmd_impute(const RunConfig& cfg) {
    cfg.validate();
    const Panel raw = load_input(cfg);
    check_rank(raw, cfg.r);
    if (fs::exists(cfg.output_file) && fs::equivalent(cfg.output_file, cfg.input))
        throw UsageError("--output must differ from --input");
    const Panel filled = impute_missing_sw(raw, cfg.r, cfg.max_iter, cfg.tol);
    if (cfg.output_file.has_parent_path()) fs::create_directories(cfg.output_file.parent_path());
    emit_csv(filled, cfg.output_file);
    return 0;
}

int dispatch(const RunConfig& cfg) {
    switch (cfg.command) {
        case Command::fit: return cmd_fit(cfg);
        case Command::simulate: return cmd_simulate(cfg);
        case Command::montecarlo: return cmd_montecarlo(cfg);
        case Command::nfactors: return cmd_nfactors(cfg);
        case Command::bands: return cmd_bands(cfg);
        case Command::impute: return cmd_impute(cfg);
    }
    return 1;
}

std::string band_svg(const std::string& series, const std::vector<std::string>& time_index, const Vector& center,
                     const Vector& lower, const Vector& upper) {
    const double W = 720, H = 360, ml = 60, mr = 20, mt = 30, mb = 40;
    const Index T = center.size();
    double lo = lower.size() ? lower.minCoeff() : 0.0, hi = upper.size() ? upper.maxCoeff() : 1.0;
    if (!(hi > lo)) {
        lo -= 1.0;
        hi += 1.0;
    }
    const auto px = [&](Index t) { return ml + (W - ml - mr) * (T > 1 ? static_cast<double>(t) / (T - 1) : 0.5); };
    const auto py = [&](double v) { return mt + (H - mt - mb) * (hi - v) / (hi - lo); };
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<polygon fill=\"#9ecae1\" fill-opacity=\"0.6\" stroke=\"none\" points=\"";
    for (Index t = 0; t < T; ++t) os << px(t) << ',' << py(upper(t)) << ' ';
    for (Index t = T; t-- > 0;) os << px(t) << ',' << py(lower(t)) << ' ';
    os << "\"/>\n<polyline fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\" points=\"";
    for (Index t = 0; t < T; ++t) os << px(t) << ',' << py(center(t)) << ' ';
    os << "\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << ml << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << series << "</text>\n";
    os << "<text x=\"5\" y=\"" << py(hi) + 4 << "\" font-family=\"sans-serif\" font-size=\"10\">" << format_sig(hi, 4)
       << "</text>\n";
    os << "<text x=\"5\" y=\"" << py(lo) + 4 << "\" font-family=\"sans-serif\" font-size=\"10\">" << format_sig(lo, 4)
       << "</text>\n";
    if (T > 0) {
        os << "<text x=\"" << ml << "\" y=\"" << H - 20 << "\" font-family=\"sans-serif\" font-size=\"10\">"
           << time_index.front() << "</text>\n";
        os << "<text x=\"" << W - mr << "\" y=\"" << H - 20
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << time_index.back()
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Approximate factor model estimation (PC, QML, EM with Kalman smoothing) and Monte Carlo."};
    app.set_config("--config", "", "TOML file with option values; command-line flags take precedence");
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress informational log lines");

    RunConfig cfg;
    std::string noise = "theta";
    std::optional<Index> bandwidth;

    auto add_common_fit = [&](CLI::App* sc) {
        sc->add_option("-i,--input", cfg.input, "Input panel CSV")->required();
        sc->add_option("-r,--factors", cfg.r, "Number of factors")->capture_default_str();
        sc->add_flag("--standardize,!--no-standardize", cfg.standardize,
                     "Scale each series to unit variance before estimation (default on)");
    };
    auto add_iteration = [&](CLI::App* sc) {
        sc->add_option("--max-iter", cfg.max_iter, "Iteration cap")->capture_default_str();
        sc->add_option("--tol", cfg.tol, "Relative convergence tolerance")->capture_default_str();
    };
    auto add_outdir = [&](CLI::App* sc) {
        sc->add_option("-o,--output-dir", cfg.output_dir, "Directory for output files")->capture_default_str();
        sc->add_flag("--sidecar", cfg.sidecar, "Also write full-precision binary matrices (.bin)");
    };
    auto add_dgp = [&](CLI::App* sc, bool grid) {
        if (grid) {
            sc->add_option("--n", cfg.grid_n, "Cross-section sizes")->delimiter(',');
            sc->add_option("--t", cfg.grid_t, "Sample lengths")->delimiter(',');
            sc->add_option("--tau", cfg.grid_tau, "Cross-sectional correlation decays")->delimiter(',');
            sc->add_option("--delta", cfg.grid_delta, "Maximum idiosyncratic AR coefficients")->delimiter(',');
            sc->add_option("--reps", cfg.dgp.b_reps, "Replications per cell")->capture_default_str();
        } else {
            sc->add_option("--n", cfg.dgp.n, "Cross-section size")->capture_default_str();
            sc->add_option("--t", cfg.dgp.t, "Sample length")->capture_default_str();
            sc->add_option("--tau", cfg.dgp.tau, "Cross-sectional correlation decay")->capture_default_str();
            sc->add_option("--delta", cfg.dgp.delta, "Maximum idiosyncratic AR coefficient")->capture_default_str();
            sc->add_option("--rep", cfg.rep_index, "Replication index")->capture_default_str();
        }
        sc->add_option("-r,--factors", cfg.dgp.r, "Number of factors")->capture_default_str();
        sc->add_option("--band", cfg.dgp.band, "Half-band of the idiosyncratic covariance")->capture_default_str();
        sc->add_option("--seed", cfg.dgp.seed, "Base seed")->capture_default_str();
        sc->add_option("--burn-in", cfg.dgp.burn_in, "Discarded initial periods")->capture_default_str();
        sc->add_option("--noise", noise, "Idiosyncratic scale: theta, unit or none")->capture_default_str();
    };

    auto* fit = app.add_subcommand("fit", "Estimate a factor model on a CSV panel");
    add_common_fit(fit);
    fit->add_option("-m,--method", cfg.method, "pc, qml, em or iter")->capture_default_str();
    fit->add_option("--init-scale", cfg.init_scale, "Initial state variance scale for the Kalman filter")
        ->capture_default_str();
    add_iteration(fit);
    add_outdir(fit);

    auto* sim = app.add_subcommand("simulate", "Draw one panel from the simulation design");
    add_dgp(sim, false);
    add_outdir(sim);

    auto* mc = app.add_subcommand("montecarlo", "Run the Monte Carlo MSE tables");
    add_dgp(mc, true);
    mc->add_option("-e,--estimators", cfg.estimators, "Comma list of ols, pc, qml, em")->capture_default_str();
    mc->add_option("-j,--threads", cfg.threads, "Worker threads (default: DFM_THREADS or all cores)");
    add_outdir(mc);

    auto* nf = app.add_subcommand("nfactors", "Select the number of factors by IC_p2");
    nf->add_option("-i,--input", cfg.input, "Input panel CSV")->required();
    nf->add_option("--r-max", cfg.r_max, "Largest candidate")->capture_default_str();
    nf->add_flag("--standardize,!--no-standardize", cfg.standardize, "Scale series to unit variance (default on)");
    add_outdir(nf);

    auto* bands = app.add_subcommand("bands", "Confidence bands for the common component");
    add_common_fit(bands);
    bands->add_option("--level", cfg.level, "Coverage level")->capture_default_str();
    bands->add_option("-s,--series", cfg.series, "Series to report (default all)")->delimiter(',');
    bands->add_option("--half-band", cfg.half_band, "Cross-sectional HAC half-band (0 for unordered panels)")
        ->capture_default_str();
    bands->add_option("--bandwidth", bandwidth, "Time HAC bandwidth (default automatic)");
    bands->add_option("--weights", cfg.weights, "Cross-sectional weights: ols or wls")->capture_default_str();
    bands->add_flag("--plot", cfg.plot, "Write one SVG per selected series");
    add_outdir(bands);

    auto* imp = app.add_subcommand("impute", "Fill missing cells by iterated principal components");
    imp->add_option("-i,--input", cfg.input, "Input panel CSV")->required();
    imp->add_option("-o,--output", cfg.output_file, "Output CSV")->required();
    imp->add_option("-r,--factors", cfg.r, "Number of factors")->capture_default_str();
    Index impute_max_iter = 500;
    double impute_tol = 1e-8;
    imp->add_option("--max-iter", impute_max_iter, "Iteration cap")->capture_default_str();
    imp->add_option("--tol", impute_tol, "Relative convergence tolerance")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    spdlog::set_default_logger(spdlog::stderr_color_mt("dfm_cli"));
    spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

    if (*fit) cfg.command = Command::fit;
    else if (*sim) cfg.command = Command::simulate;
    else if (*mc) cfg.command = Command::montecarlo;
    else if (*nf) cfg.command = Command::nfactors;
    else if (*bands) cfg.command = Command::bands;
    else {
        cfg.command = Command::impute;
        cfg.max_iter = impute_max_iter;
        cfg.tol = impute_tol;
    }
    cfg.bandwidth = bandwidth;

    try {
        cfg.dgp.noise = parse_noise(noise);
        return dispatch(cfg);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace dfm
