#include "dfm/sim.hpp"

#include "dfm/em_dynamic.hpp"
#include "dfm/io.hpp"
#include "dfm/pca.hpp"
#include "dfm/static_qml.hpp"

#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

namespace dfm {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

const std::vector<std::string> kLoadingNames = {"OLS", "PC", "QMLS", "EM"};
const std::vector<std::string> kFactorNames = {"OLS", "PC", "WLS", "LP", "KS"};

Chain chain_of(Table table, const std::string& name) {
    if (name == "OLS") return Chain::ols;
    if (name == "PC") return Chain::pc;
    if (table == Table::loadings) return name == "QMLS" ? Chain::qml : Chain::em;
    return name == "KS" ? Chain::em : Chain::qml;
}

struct RepResult {
    // Indexed like kLoadingNames / kFactorNames; empty vector = not run or failed.
    std::vector<Vector> loadings = std::vector<Vector>(kLoadingNames.size());
    std::vector<Vector> factors = std::vector<Vector>(kFactorNames.size());
    std::vector<bool> failed = std::vector<bool>(4, false);
};

Index chain_slot(Chain c) {
    switch (c) {
        case Chain::ols: return 0;
        case Chain::pc: return 1;
        case Chain::qml: return 2;
        case Chain::em: return 3;
    }
    return 0;
}

RepResult run_replication(const DgpConfig& cfg, EstimatorSet est, std::uint64_t rep) {
    RepResult out;
    const SimTruth truth = simulate(cfg, rep);
    const Demeaned dm = demean(truth.panel);
    const Panel& xc = dm.centered;
    const Index r = cfg.r;

    auto guarded = [&](Chain c, auto&& body) {
        try {
            body();
        } catch (const std::exception& e) {
            out.failed[chain_slot(c)] = true;
            warn("replication " + std::to_string(rep) + ": " + e.what());
        }
    };

    if (est.has(Chain::ols)) {
        guarded(Chain::ols, [&] {
            const Matrix l = ols_loadings(xc, truth.f_true);
            const Matrix f = ols_factors(xc, truth.lambda_true).values;
            out.loadings[0] = column_mse(l, truth.lambda_true);
            out.factors[0] = column_mse(f, truth.f_true);
        });
    }
    if (est.has(Chain::pc)) {
        guarded(Chain::pc, [&] {
            const PcFit pc = pc_fit(truth.panel, r);
            const Alignment al = alignment_for(pc.params.lambda, truth.lambda_true);
            out.loadings[1] = column_mse(al.apply(pc.params.lambda), truth.lambda_true);
            out.factors[1] = column_mse(al.apply(pc.factors.values), truth.f_true);
        });
    }
    if (est.has(Chain::qml)) {
        guarded(Chain::qml, [&] {
            const StaticEmFit em = static_em_fit(truth.panel, r);
            const Alignment al = alignment_for(em.params.lambda, truth.lambda_true);
            out.loadings[2] = column_mse(al.apply(em.params.lambda), truth.lambda_true);
            out.factors[2] = column_mse(al.apply(wls_factors(xc, em.params).values), truth.f_true);
            out.factors[3] = column_mse(al.apply(lp_factors(xc, em.params).values), truth.f_true);
        });
    }
    if (est.has(Chain::em)) {
        guarded(Chain::em, [&] {
            const DynamicEmFit em = em_fit(truth.panel, r);
            const Alignment al = alignment_for(em.params.base.lambda, truth.lambda_true);
            out.loadings[3] = column_mse(al.apply(em.params.base.lambda), truth.lambda_true);
            out.factors[4] = column_mse(al.apply(em.smoother.f_smooth), truth.f_true);
        });
    }
    return out;
}

McCell summarize(Table table, const std::string& name, Index slot, Index chain, const std::vector<RepResult>& reps,
                 Index r) {
    McCell c;
    c.table = table;
    c.estimator = name;
    c.mse_mean = Vector::Zero(r);
    c.mse_sd = Vector::Zero(r);
    for (const RepResult& rr : reps) {
        const Vector& v = table == Table::loadings ? rr.loadings[slot] : rr.factors[slot];
        if (rr.failed[chain] || v.size() == 0) {
            c.samples.emplace_back();
            ++c.failures;
            continue;
        }
        c.samples.push_back(v);
        ++c.count;
        c.mse_mean += v;
    }
    if (c.count > 0) c.mse_mean /= static_cast<double>(c.count);
    if (c.count > 1) {
        for (const Vector& v : c.samples)
            if (v.size() == r) c.mse_sd += (v - c.mse_mean).cwiseAbs2();
        c.mse_sd = (c.mse_sd / static_cast<double>(c.count - 1)).cwiseSqrt();
    }
    return c;
}

}  // namespace

void DgpConfig::validate() const {
    if (r < 1 || r >= std::min(n, t)) throw Error("dgp: r must satisfy 1 <= r < min(n, t)");
    if (!(tau >= 0.0 && tau < 1.0)) throw Error("dgp: tau must lie in [0, 1)");
    if (!(delta >= 0.0 && delta < 1.0)) throw Error("dgp: delta must lie in [0, 1)");
    if (band < 0) throw Error("dgp: band must be non-negative");
    if (!(theta_lo >= 0.0 && theta_lo <= theta_hi)) throw Error("dgp: invalid theta range");
    if (b_reps < 1) throw Error("dgp: b_reps must be positive");
    if (burn_in < 0) throw Error("dgp: burn_in must be non-negative");
}

std::mt19937_64 replication_engine(std::uint64_t seed, std::uint64_t rep_index) {
    const std::uint64_t a = splitmix64(seed);
    const std::uint64_t b = splitmix64(a ^ splitmix64(rep_index + 0x632BE59BD9B4E019ULL));
    std::seed_seq seq{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32)};
    return std::mt19937_64(seq);
}

SimTruth simulate(const DgpConfig& cfg, std::uint64_t rep) {
    cfg.validate();
    const Index N = cfg.n, T = cfg.t, r = cfg.r, burn = cfg.burn_in;
    std::mt19937_64 gen = replication_engine(cfg.seed, rep);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto unif = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); };

    Matrix l(N, r);
    for (Index i = 0; i < N; ++i)
        for (Index j = 0; j < r; ++j) l(i, j) = 1.0 + normal(gen);

    Matrix a_check(r, r);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < r; ++j) a_check(i, j) = i == j ? unif(0.5, 0.8) : unif(0.0, 0.3);
    const double norm2 = Eigen::JacobiSVD<Matrix>(a_check).singularValues()(0);
    const Matrix a = 0.9 * a_check / norm2;

    Matrix gamma_e = Matrix::Zero(N, N);
    for (Index i = 0; i < N; ++i) gamma_e(i, i) = unif(0.5, 1.5);
    if (cfg.tau > 0.0) {
        for (Index i = 0; i < N; ++i)
            for (Index j = 0; j < N; ++j)
                if (i != j && std::abs(i - j) <= cfg.band) gamma_e(i, j) = std::pow(cfg.tau, static_cast<double>(std::abs(i - j)));
    }
    Matrix chol_e;
    if (cfg.tau > 0.0) {
        Eigen::LLT<Matrix> llt(gamma_e);
        if (llt.info() != Eigen::Success) {
            Eigen::SelfAdjointEigenSolver<Matrix> es(gamma_e, Eigen::EigenvaluesOnly);
            const double shift = 1e-6 - es.eigenvalues().minCoeff();
            warn("simulate: banded idiosyncratic covariance not positive definite; diagonal loaded by " +
                 std::to_string(shift));
            gamma_e.diagonal().array() += shift;
            llt.compute(gamma_e);
        }
        chol_e = llt.matrixL();
    }

    Vector ar(N), theta(N);
    for (Index i = 0; i < N; ++i) ar(i) = cfg.delta > 0.0 ? unif(0.0, cfg.delta) : 0.0;
    for (Index i = 0; i < N; ++i) theta(i) = cfg.theta_hi > cfg.theta_lo ? unif(cfg.theta_lo, cfg.theta_hi) : cfg.theta_lo;

    Matrix f(T, r);
    Vector state = Vector::Zero(r), u(r);
    for (Index s = 0; s < burn + T; ++s) {
        for (Index j = 0; j < r; ++j) u(j) = normal(gen);
        state = a * state + u;
        if (s >= burn) f.row(s - burn) = state.transpose();
    }

    Matrix xi(T, N);
    Vector idio = Vector::Zero(N), z(N), e(N);
    const Vector sd_e = gamma_e.diagonal().cwiseSqrt();
    for (Index s = 0; s < burn + T; ++s) {
        for (Index i = 0; i < N; ++i) z(i) = normal(gen);
        if (cfg.tau > 0.0)
            e.noalias() = chol_e.triangularView<Eigen::Lower>() * z;
        else
            e = sd_e.cwiseProduct(z);
        idio = ar.cwiseProduct(idio) + e;
        if (s >= burn) xi.row(s - burn) = idio.transpose();
    }

    const Matrix chi = f * l.transpose();
    const Vector chi_mean = chi.colwise().mean().transpose();
    const Matrix chi_c = chi.rowwise() - chi_mean.transpose();
    const Matrix xi_c = xi.rowwise() - xi.colwise().mean();

    Vector phi(N);
    for (Index i = 0; i < N; ++i) {
        switch (cfg.noise) {
            case NoiseScale::theta: {
                const double den = xi_c.col(i).squaredNorm();
                phi(i) = den > 0.0 ? std::sqrt(theta(i) * chi_c.col(i).squaredNorm() / den) : 0.0;
                break;
            }
            case NoiseScale::unit: phi(i) = 1.0; break;
            case NoiseScale::none: phi(i) = 0.0; break;
        }
    }

    SimTruth out;
    out.panel = Panel::from_matrix(chi + xi * phi.asDiagonal());
    const Matrix f_c = f.rowwise() - f.colwise().mean();
    const Identified id = identify_rotation(l, f_c);
    out.lambda_true = id.lambda;
    out.f_true = id.factors;
    out.chi_true = out.f_true * out.lambda_true.transpose();
    out.phi = phi;
    out.theta = theta;
    out.ar_coef = ar;
    out.a_raw = a;

    const Matrix rinv = id.rotation.inverse();
    out.dyn.a_mat = rinv * a * id.rotation;
    out.dyn.h_mat = psd_cholesky(rinv * rinv.transpose());
    out.dyn.base.alpha = chi_mean;
    out.dyn.base.lambda = id.lambda;
    out.dyn.base.sigma2.resize(N);
    for (Index i = 0; i < N; ++i)
        out.dyn.base.sigma2(i) = phi(i) * phi(i) * gamma_e(i, i) / (1.0 - ar(i) * ar(i));
    return out;
}

EstimatorSet EstimatorSet::parse(const std::string& csv) {
    EstimatorSet s;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        for (auto& ch : tok) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (tok == "ols") s.add(Chain::ols);
        else if (tok == "pc") s.add(Chain::pc);
        else if (tok == "qml" || tok == "qmls" || tok == "qml-s") s.add(Chain::qml);
        else if (tok == "em") s.add(Chain::em);
        else if (tok == "all") s = all();
        else if (!tok.empty()) throw Error("unknown estimator '" + tok + "' (expected ols, pc, qml, em, all)");
    }
    return s;
}

const McCell& McReport::cell(Table table, const std::string& estimator) const {
    for (const McCell& c : cells)
        if (c.table == table && c.estimator == estimator) return c;
    throw Error("report has no cell for estimator " + estimator);
}

McReport run_monte_carlo(const DgpConfig& cfg, EstimatorSet est, Index threads) {
    cfg.validate();
    if (est.empty()) throw Error("run_monte_carlo: estimator set is empty");
    if (threads < 1) threads = 1;
    const auto start = std::chrono::steady_clock::now();

    const Index B = cfg.b_reps;
    std::vector<RepResult> results(B);
    std::atomic<Index> next{0};
    auto worker = [&] {
        for (Index b = next++; b < B; b = next++) results[b] = run_replication(cfg, est, static_cast<std::uint64_t>(b));
    };
    const Index nthreads = std::min(threads, B);
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (Index k = 0; k < nthreads; ++k) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    McReport rep;
    rep.config = cfg;
    rep.threads = nthreads;
    for (std::size_t k = 0; k < kLoadingNames.size(); ++k) {
        const Chain c = chain_of(Table::loadings, kLoadingNames[k]);
        if (est.has(c))
            rep.cells.push_back(summarize(Table::loadings, kLoadingNames[k], static_cast<Index>(k), chain_slot(c), results, cfg.r));
    }
    for (std::size_t k = 0; k < kFactorNames.size(); ++k) {
        const Chain c = chain_of(Table::factors, kFactorNames[k]);
        if (est.has(c))
            rep.cells.push_back(summarize(Table::factors, kFactorNames[k], static_cast<Index>(k), chain_slot(c), results, cfg.r));
    }
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

std::string report_csv(const std::vector<McReport>& reports, Table table) {
    if (reports.empty()) return {};
    std::vector<const McCell*> cols;
    const McReport& first = reports.front();
    for (const McCell& c : first.cells)
        if (c.table == table) cols.push_back(&c);
    const Index r = first.config.r;

    std::ostringstream os;
    os << "n,t,tau,delta";
    for (const char* suffix : {"", "_sd"})
        for (Index j = 0; j < r; ++j)
            for (const McCell* c : cols) os << ',' << c->estimator << '_' << (j + 1) << suffix;
    os << ",count,failures\n";
    for (const McReport& rep : reports) {
        const DgpConfig& g = rep.config;
        os << g.n << ',' << g.t << ',' << format_sig(g.tau) << ',' << format_sig(g.delta);
        std::vector<const McCell*> row;
        for (const McCell* c : cols) row.push_back(&rep.cell(table, c->estimator));
        for (Index j = 0; j < r; ++j)
            for (const McCell* c : row) os << ',' << format_sig(c->mse_mean(j));
        for (Index j = 0; j < r; ++j)
            for (const McCell* c : row) os << ',' << format_sig(c->mse_sd(j));
        Index count = g.b_reps, failures = 0;
        for (const McCell* c : row) {
            count = std::min(count, c->count);
            failures = std::max(failures, c->failures);
        }
        os << ',' << count << ',' << failures << '\n';
    }
    return os.str();
}

Index threads_from_env(Index fallback) {
    if (const char* v = std::getenv("DFM_THREADS")) {
        try {
            const long n = std::stol(v);
            if (n >= 1) return static_cast<Index>(n);
        } catch (const std::exception&) {
        }
        warn(std::string("ignoring invalid DFM_THREADS value '") + v + "'");
    }
    return fallback;
}

}  // namespace dfm
