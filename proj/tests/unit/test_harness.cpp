#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "safeshield/errors.hpp"
#include "safeshield/harness.hpp"

using namespace safeshield;
using namespace safeshield::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("safeshield_harness_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

/// Small, fast pendulum settings for end-to-end harness checks.
KeyValues quick_pendulum(const fs::path& out) {
    return {{"env.name", "pendulum"},
            {"agent.name", "td3"},
            {"agent.steps", "600"},
            {"agent.hidden", "8,8"},
            {"agent.batch", "16"},
            {"agent.learning_starts", "200"},
            {"agent.train_freq", "10"},
            {"agent.gradient_steps", "1"},
            {"shield.type", "replace_sample,project"},
            {"shield.tuple", "naive,both"},
            {"run.seeds", "1,2,3"},
            {"run.output_dir", out.string()}};
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("config text parsing") {
    const auto kv = parse_config_text("# comment\n env.name = quadrotor  # trailing\n\nagent.lr=0.5\nagent.lr = 0.25\n");
    CHECK(kv.size() == 2);
    CHECK(kv.at("env.name") == "quadrotor");
    CHECK(kv.at("agent.lr") == "0.25");
    CHECK_THROWS_AS(parse_config_text("a = 1\nbroken line\n", "x.cfg"), ParseError);
    try {
        parse_config_text("a = 1\nbroken line\n", "x.cfg");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("x.cfg:2") != std::string::npos);
    }
    CHECK_THROWS_AS(read_config_file("/nonexistent/missing.cfg"), ConfigError);
}

TEST_CASE("environment-specific defaults") {
    const auto pend = resolve_config({});
    CHECK(pend.spec.kind == env::EnvKind::pendulum);
    CHECK(pend.train.agent == rl::AgentKind::td3);
    CHECK(pend.train.td3.lr == 3.5e-3);
    CHECK(pend.train.td3.learning_starts == 10000);
    CHECK(pend.train.steps == 60000);

    const auto quad = resolve_config({{"env.name", "quadrotor"}, {"agent.name", "dqn"}});
    CHECK(quad.train.dqn.lr == 1e-4);
    CHECK(quad.train.dqn.gamma == 0.99999);
    CHECK(quad.train.dqn.batch == 64);
    CHECK(quad.train.dqn.hidden == std::vector<int>{64, 64});
    CHECK(quad.train.dqn.eps_initial == 0.137);
    CHECK(quad.train.grid_points == 5);
    CHECK(quad.train.steps == 200000);

    const auto td3q = resolve_config({{"env.name", "quadrotor"}});
    CHECK(td3q.train.td3.target_noise == 0.12);
    CHECK(td3q.train.td3.gradient_steps == 10);
}

TEST_CASE("overrides and validation") {
    const auto c = resolve_config({{"agent.lr", "1e-2"},
                                   {"agent.hidden", "16,8"},
                                   {"env.disturbance.lower", "-0.5"},
                                   {"env.disturbance.upper", "0.5"},
                                   {"safety.gain", "-20,-5"},
                                   {"run.seeds", "4,5"},
                                   {"shield.tuple", "all"}});
    CHECK(c.train.td3.lr == 0.01);
    CHECK(c.train.td3.hidden == std::vector<int>{16, 8});
    CHECK(c.spec.disturbance_box.upper()(0) == 0.5);
    REQUIRE(c.gain.has_value());
    CHECK((*c.gain)(0, 1) == -5.0);
    CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
    CHECK(c.tuples.size() == 4);

    CHECK_THROWS_AS(resolve_config({{"agent.typo", "1"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({{"agent.lr", "fast"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({{"agent.gamma", "1.5"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({{"env.name", "cartpole"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({{"safety.gain", "1,2,3"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({{"run.seeds", ""}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({{"safety.compute", "false"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({{"env.disturbance.lower", "1"}}), ConfigError);
    // The only combination is invalid for a discrete learner.
    CHECK_THROWS_AS(resolve_config({{"agent.name", "dqn"}, {"shield.type", "project"}}), ConfigError);
}

TEST_CASE("resolved configs describe every key and round-trip") {
    const auto c = resolve_config({{"env.name", "quadrotor"}, {"agent.name", "dqn"}, {"agent.lr", "0.125"}});
    const auto d = describe(c);
    CHECK(d.size() == config_keys().size());
    for (const auto& k : config_keys()) {
        CHECK(d.count(k.key) == 1);
        CHECK_FALSE(k.help.empty());
    }
    CHECK(describe(resolve_config(d)) == d);
    CHECK(d.at("agent.lr") == "0.125");
}

TEST_CASE("intervention rate") {
    const Box box(Vector::Constant(2, -1.0), Vector::Constant(2, 1.0));
    std::vector<shields::ShieldDecision> quiet(5), busy(5);
    for (auto& d : busy) d.intervened = true;
    CHECK(intervention_rate(quiet, shields::ShieldType::replace_sample, box, 1.0).rate == 0.0);
    CHECK(intervention_rate(busy, shields::ShieldType::project, box, 1.0).rate == 1.0);

    std::vector<shields::ShieldDecision> full(4);
    for (auto& d : full) d.mask_scale = 1.0;
    const auto r = intervention_rate(full, shields::ShieldType::mask, box, 4.0);
    CHECK(r.raw_ratio == doctest::Approx(1.0));
    CHECK(r.rate == 0.0);

    std::vector<shields::ShieldDecision> half(2);
    half[0].mask_scale = 0.5;  // volume 1
    half[1].mask_scale = 1.0;  // volume 4
    const auto h = intervention_rate(half, shields::ShieldType::mask, box, 4.0);
    CHECK(h.raw_ratio == doctest::Approx(2.5 / 4.0));
    CHECK(h.rate == doctest::Approx(1.0 - 2.5 / 4.0));

    CHECK_THROWS_AS(intervention_rate(full, shields::ShieldType::mask, box, 0.0), ConfigError);
    CHECK_THROWS_AS(intervention_rate({}, shields::ShieldType::mask, box, 1.0), PreconditionError);
}

TEST_CASE("zero steps give header-only CSVs") {
    const auto dir = scratch_dir("empty");
    auto kv = quick_pendulum(dir);
    kv["agent.steps"] = "0";
    kv["run.seeds"] = "7";
    const auto res = run_experiment(resolve_config(kv));
    CHECK(res.runs.size() == 4);
    for (const auto& r : res.runs) CHECK(slurp(dir / r.csv) == std::string(kRunCsvHeader) + "\n");
    CHECK(read_csv(dir / "aggregate.csv").size() == 1);
    CHECK(fs::exists(dir / "manifest.json"));
}

TEST_CASE("experiment outputs: determinism, zero violations, aggregate recomputation") {
    const auto dir = scratch_dir("grid");
    auto kv = quick_pendulum(dir);
    kv["run.seeds"] = "11,11,12";
    const auto config = resolve_config(kv);
    const auto res = run_experiment(config);
    REQUIRE(res.runs.size() == 12);
    CHECK_FALSE(res.safety_abort());

    std::map<std::string, std::vector<fs::path>> cells;
    for (const auto& r : res.runs) {
        const auto rows = read_csv(dir / r.csv);
        REQUIRE(rows.size() == 4);  // header + three episodes of 200 steps
        CHECK(rows.front().size() == 10);
        for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i][5] == "0");
        cells[shields::to_string(r.shield) + "," + shields::to_string(r.tuple)].push_back(dir / r.csv);
    }
    // Identical seeds write identical files.
    for (std::size_t i = 0; i < res.runs.size(); i += 3) CHECK(slurp(dir / res.runs[i].csv) == slurp(dir / res.runs[i + 1].csv));

    // Independent recomputation of the aggregate from the per-run files.
    const auto agg = read_csv(dir / "aggregate.csv");
    REQUIRE(agg.size() == 1 + 4 * 3);
    for (std::size_t row = 1; row < agg.size(); ++row) {
        const auto& a = agg[row];
        const auto& files = cells.at(a[0] + "," + a[1]);
        const int episode = std::stoi(a[3]);
        CHECK(std::stoi(a[5]) == 3);
        for (int col : {2, 3}) {  // return, intervention_rate
            std::vector<double> v;
            for (const auto& f : files) v.push_back(std::stod(read_csv(f)[static_cast<std::size_t>(episode) + 1][static_cast<std::size_t>(col)]));
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= 3.0;
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            const double sd = std::sqrt(var / 3.0);
            const std::size_t base = col == 2 ? 6 : 8;
            CHECK(std::stod(a[base]) == doctest::Approx(mean).epsilon(1e-12));
            CHECK(std::stod(a[base + 1]) == doctest::Approx(sd).epsilon(1e-9).scale(1e-12));
        }
    }

    const std::string manifest = slurp(dir / "manifest.json");
    for (const auto& k : config_keys()) CHECK(manifest.find("\"" + k.key + "\"") != std::string::npos);

    // A second invocation reproduces every file byte for byte.
    const auto dir2 = scratch_dir("grid2");
    kv["run.output_dir"] = dir2.string();
    const auto res2 = run_experiment(resolve_config(kv));
    for (std::size_t i = 0; i < res.runs.size(); ++i) CHECK(slurp(dir / res.runs[i].csv) == slurp(dir2 / res2.runs[i].csv));
    CHECK(slurp(dir / "aggregate.csv") == slurp(dir2 / "aggregate.csv"));
}

TEST_CASE("aggregates do not depend on run order") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<std::vector<rl::EpisodeLog>> runs(5, std::vector<rl::EpisodeLog>(4));
    for (auto& r : runs)
        for (auto& e : r) {
            e.return_mean = n(rng);
            e.intervention_rate = std::abs(n(rng));
            e.mask_volume_ratio = std::abs(n(rng));
        }
    std::vector<const std::vector<rl::EpisodeLog>*> fwd, rev;
    for (auto& r : runs) fwd.push_back(&r);
    rev.assign(fwd.rbegin(), fwd.rend());
    const auto a = aggregate(fwd), b = aggregate(rev);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].return_mean == b[i].return_mean);
        CHECK(a[i].return_std == b[i].return_std);
        CHECK(a[i].mask_ratio_std == b[i].mask_ratio_std);
    }
}

TEST_CASE("unshielded quadrotor runs record violations") {
    const auto dir = scratch_dir("quad_none");
    const auto res = run_experiment(resolve_config({{"env.name", "quadrotor"},
                                                    {"agent.steps", "2000"},
                                                    {"agent.learning_starts", "5000"},
                                                    {"shield.type", "none"},
                                                    {"run.output_dir", dir.string()}}));
    REQUIRE(res.runs.size() == 1);
    long total = 0;
    const auto rows = read_csv(dir / res.runs[0].csv);
    for (std::size_t i = 1; i < rows.size(); ++i) total += std::stol(rows[i][5]);
    CHECK(total > 0);
    CHECK_FALSE(res.safety_abort());
}

TEST_CASE("output directory override") {
    const auto dir = scratch_dir("env_override");
    ::setenv("SAFESHIELD_OUT", dir.string().c_str(), 1);
    auto kv = quick_pendulum("/nonexistent/ignored");
    kv["agent.steps"] = "0";
    const auto res = run_experiment(resolve_config(kv));
    ::unsetenv("SAFESHIELD_OUT");
    CHECK(res.directory == dir.string());
    CHECK(fs::exists(dir / "manifest.json"));
}

TEST_CASE("deployment summaries") {
    rl::EvalSummary a, b;
    a.episodes = b.episodes = 2;
    // Episode returns {1, 3} and {5, 7}.
    a.return_mean = 2.0;
    a.return_std = 1.0;
    b.return_mean = 6.0;
    b.return_std = 1.0;
    const auto p = pool({a, b});
    CHECK(p.episodes == 4);
    CHECK(p.return_mean == doctest::Approx(4.0));
    CHECK(p.return_std == doctest::Approx(std::sqrt((9.0 + 1.0 + 1.0 + 9.0) / 4.0)));
    CHECK(pool({}).episodes == 0);

    const auto dir = scratch_dir("deploy");
    auto kv = quick_pendulum(dir);
    kv["run.seeds"] = "1";
    kv["shield.type"] = "mask";
    kv["shield.tuple"] = "naive";
    kv["run.eval_episodes"] = "3";
    const auto config = resolve_config(kv);
    const auto rows = run_deployment(config);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].summary.episodes == 3);
    CHECK(rows[0].summary.violation_mean == 0.0);
    CHECK(rows[0].summary.violation_std == 0.0);
    CHECK(rows[1].shield == "failsafe_only");
    CHECK(read_csv(dir / "deployment.csv").size() == 3);

    const auto st = build_safety(config);
    rl::TrainConfig tc = config.train;
    tc.shield.type = shields::ShieldType::mask;
    const rl::Agent agent = rl::make_agent(tc, st.problem);
    CHECK(evaluate_deployment(tc, st.problem, agent, 0).episodes == 0);
}

}  // TEST_SUITE
