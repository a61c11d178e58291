#include "oracles.hpp"

#include "dfm/cli.hpp"
#include "dfm/io.hpp"
#include "dfm/sim.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace dfm;
namespace fs = std::filesystem;

namespace {

std::string cli_path() {
    const char* p = std::getenv("DFM_CLI");
    return p ? p : "./dfm";
}

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("dfm_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args, const fs::path& log = {}) {
    std::string cmd = cli_path() + " -q " + args;
    cmd += log.empty() ? " >/dev/null 2>&1" : " >" + log.string() + " 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Index count_lines(const std::string& s) { return static_cast<Index>(std::count(s.begin(), s.end(), '\n')); }

Matrix read_numeric(const fs::path& p) {
    const Panel q = ingest_csv(p);
    return q.values;
}

}  // namespace

TEST_CASE("ingest a well-formed file") {
    const Panel p = parse_csv("date,a,b\n2000Q1,1,2\n2000Q2,3,4.5\n2000Q3,-1e-3,7\n");
    CHECK(p.T() == 3);
    CHECK(p.N() == 2);
    CHECK(p.names == std::vector<std::string>{"a", "b"});
    CHECK(p.time_index[1] == "2000Q2");
    CHECK(p.values(1, 1) == 4.5);
    CHECK(p.complete());
}

TEST_CASE("empty cells become missing") {
    const Panel p = parse_csv("t,a,b\n1,1,\n2,,4\n3,\"5\",6\n");
    CHECK_FALSE(p.mask(0, 1));
    CHECK_FALSE(p.mask(1, 0));
    CHECK(p.values(2, 0) == 5.0);
    CHECK(p.observed_count(0) == 2);
}

TEST_CASE("ingest errors carry line numbers") {
    auto message = [](const std::string& text) {
        try {
            parse_csv(text, "f.csv");
        } catch (const Error& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message("t,a,b\n1,2,3\n2,3\n").find("f.csv:3") != std::string::npos);
    CHECK(message("t,a,b\n1,2,x\n").find("f.csv:2") != std::string::npos);
    CHECK(message("t,a,b\n1,2,x\n").find("non-numeric") != std::string::npos);
    CHECK(message("t,a,a\n1,2,3\n").find("duplicate") != std::string::npos);
    CHECK(message("t,a,a\n1,2,3\n").find("f.csv:1") != std::string::npos);
}

TEST_CASE("emit then ingest reproduces the panel exactly") {
    std::mt19937_64 g(401);
    Matrix x = oracle::randn(g, 25, 6) * 1e3;
    x(3, 2) = std::nan("");
    x(0, 0) = 1.0 / 3.0;
    x(1, 1) = -5e-300;
    Panel p = Panel::from_matrix(x, {"a", "b,c", "d\"q", "e", "f", "g"});
    TempDir d;
    emit_csv(p, d.path / "p.csv");
    const Panel q = ingest_csv(d.path / "p.csv");
    CHECK(q.names == p.names);
    CHECK(q.time_index == p.time_index);
    CHECK((q.mask == p.mask).all());
    for (Index t = 0; t < 25; ++t)
        for (Index i = 0; i < 6; ++i)
            if (p.mask(t, i)) CHECK(q.values(t, i) == p.values(t, i));
    emit_csv(q, d.path / "q.csv");
    CHECK(slurp(d.path / "p.csv") == slurp(d.path / "q.csv"));
}

TEST_CASE("binary sidecar round trip") {
    std::mt19937_64 g(403);
    const Matrix m = oracle::randn(g, 7, 3);
    TempDir d;
    write_sidecar(d.path / "m.bin", m);
    CHECK((read_sidecar(d.path / "m.bin").array() == m.array()).all());
}

TEST_CASE("format helpers") {
    CHECK(format_sig(0.0101234567) == "0.0101235");
    CHECK(format_sig(123456789.0) == "1.23457e+08");
    CHECK(std::stod(format_roundtrip(0.1 + 0.2)) == 0.1 + 0.2);
}

TEST_CASE("fit --method pc writes outputs with the right shapes") {
    TempDir d;
    REQUIRE(run("simulate --n 30 --t 60 -o " + d.path.string()) == 0);
    const fs::path panel = d.path / "panel.csv";
    const std::string before = slurp(panel);
    REQUIRE(run("fit -i " + panel.string() + " -m pc -r 2 -o " + (d.path / "pc").string()) == 0);
    for (const char* f : {"loadings.csv", "factors.csv", "sigma2.csv", "summary.csv"})
        CHECK(fs::exists(d.path / "pc" / f));
    const Panel l = ingest_csv(d.path / "pc" / "loadings.csv");
    CHECK(l.T() == 30);
    CHECK(l.N() == 2);
    CHECK(ingest_csv(d.path / "pc" / "factors.csv").T() == 60);
    const std::string summary = slurp(d.path / "pc" / "summary.csv");
    CHECK(summary.find("explained_variance,") != std::string::npos);
    CHECK(summary.find("loglik,") != std::string::npos);
    CHECK(slurp(panel) == before);
}

TEST_CASE("fit --method em recovers the simulated factors") {
    TempDir d;
    REQUIRE(run("simulate --n 60 --t 100 --rep 7 -o " + d.path.string()) == 0);
    REQUIRE(run("fit -i " + (d.path / "panel.csv").string() + " -m em --sidecar -o " + (d.path / "em").string()) == 0);
    CHECK(fs::exists(d.path / "em" / "A.csv"));
    CHECK(fs::exists(d.path / "em" / "H.csv"));
    const Matrix f = read_sidecar(d.path / "em" / "factors.bin");
    const Matrix truth = read_numeric(d.path / "truth_factors.csv");
    const Matrix fa = align_columns(f, truth);
    for (Index j = 0; j < 2; ++j) {
        const Vector a = fa.col(j).array() - fa.col(j).mean();
        const Vector b = truth.col(j).array() - truth.col(j).mean();
        CHECK(a.dot(b) / (a.norm() * b.norm()) > 0.95);
    }
}

TEST_CASE("other fit methods run") {
    TempDir d;
    REQUIRE(run("simulate --n 20 --t 50 -o " + d.path.string()) == 0);
    for (const char* m : {"qml", "iter"})
        CHECK(run("fit -i " + (d.path / "panel.csv").string() + " -m " + m + " -o " + (d.path / m).string()) == 0);
    CHECK(fs::exists(d.path / "qml" / "factors_lp.csv"));
}

TEST_CASE("exit codes") {
    TempDir d;
    REQUIRE(run("simulate --n 10 --t 20 -o " + d.path.string()) == 0);
    const std::string in = (d.path / "panel.csv").string();
    CHECK(run("fit -i " + in + " -r 10 -o " + d.path.string()) == 2);
    CHECK(run("fit -i " + in + " -m nope -o " + d.path.string()) == 1);
    CHECK(run("fit -o " + d.path.string()) == 1);
    CHECK(run("no-such-command") == 1);
    CHECK(run("fit -i " + (d.path / "missing.csv").string()) == 1);
    CHECK(run("--help") == 0);
}

TEST_CASE("bands output, unknown series and plots") {
    TempDir d;
    REQUIRE(run("simulate --n 40 --t 80 -o " + d.path.string()) == 0);
    const std::string in = (d.path / "panel.csv").string();
    REQUIRE(run("bands -i " + in + " -s x2,x5 --plot -o " + (d.path / "b").string()) == 0);
    const std::string csv = slurp(d.path / "b" / "bands.csv");
    CHECK(csv.rfind("series,t,center,lower,upper\n", 0) == 0);
    CHECK(count_lines(csv) == 1 + 2 * 80);
    CHECK(fs::exists(d.path / "b" / "band_x2.svg"));
    CHECK(slurp(d.path / "b" / "band_x5.svg").find("<polygon") != std::string::npos);

    const fs::path log = d.path / "err.txt";
    CHECK(run("bands -i " + in + " -s nope -o " + (d.path / "c").string(), log) == 1);
    const std::string err = slurp(log);
    CHECK(err.find("nope") != std::string::npos);
    CHECK(err.find("x1, x2") != std::string::npos);
}

TEST_CASE("montecarlo smoke run is deterministic and thread-count independent") {
    TempDir d;
    const std::string base = "montecarlo --n 20 --t 40 --reps 2 --seed 99 ";
    REQUIRE(run(base + "-j 1 -o " + (d.path / "a").string()) == 0);
    REQUIRE(run(base + "-j 1 -o " + (d.path / "b").string()) == 0);
    REQUIRE(run(base + "-j 2 -o " + (d.path / "c").string()) == 0);
    for (const char* f : {"mc_loadings.csv", "mc_factors.csv"}) {
        const std::string a = slurp(d.path / "a" / f);
        CHECK(a == slurp(d.path / "b" / f));
        CHECK(a == slurp(d.path / "c" / f));
        CHECK(count_lines(a) == 2);
    }
    CHECK(slurp(d.path / "a" / "mc_loadings.csv").rfind("n,t,tau,delta,OLS_1,PC_1,QMLS_1,EM_1,", 0) == 0);
    const fs::path log = d.path / "out.txt";
    REQUIRE(run(base + "-e ols -o " + (d.path / "e").string(), log) == 0);
    CHECK(slurp(log).find("seed=99") != std::string::npos);
}

TEST_CASE("config file values apply and flags win") {
    TempDir d;
    REQUIRE(run("simulate --n 20 --t 50 -o " + d.path.string()) == 0);
    const fs::path cfg = d.path / "run.toml";
    {
        std::ofstream out(cfg);
        out << "[fit]\nmethod = \"pc\"\nfactors = 3\ninput = \"" << (d.path / "panel.csv").string() << "\"\n";
    }
    REQUIRE(run("--config " + cfg.string() + " fit -o " + (d.path / "x").string()) == 0);
    CHECK(ingest_csv(d.path / "x" / "loadings.csv").N() == 3);
    CHECK(slurp(d.path / "x" / "summary.csv").find("method,pc") != std::string::npos);
    REQUIRE(run("--config " + cfg.string() + " fit -r 1 -o " + (d.path / "y").string()) == 0);
    CHECK(ingest_csv(d.path / "y" / "loadings.csv").N() == 1);
}

TEST_CASE("nfactors and impute") {
    TempDir d;
    REQUIRE(run("simulate --n 50 --t 80 -o " + d.path.string()) == 0);
    const fs::path log = d.path / "nf.txt";
    REQUIRE(run("nfactors -i " + (d.path / "panel.csv").string() + " -o " + (d.path / "nf").string(), log) == 0);
    CHECK(slurp(log).find("r_hat=2") != std::string::npos);

    Panel p = ingest_csv(d.path / "panel.csv");
    p.values(3, 4) = std::nan("");
    p.mask(3, 4) = false;
    emit_csv(p, d.path / "gappy.csv");
    REQUIRE(run("impute -i " + (d.path / "gappy.csv").string() + " -o " + (d.path / "filled.csv").string()) == 0);
    const Panel q = ingest_csv(d.path / "filled.csv");
    CHECK(q.complete());
    CHECK(q.values(0, 0) == p.values(0, 0));
    CHECK(run("impute -i " + (d.path / "gappy.csv").string() + " -o " + (d.path / "gappy.csv").string()) == 1);
}
