#include "safeshield/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "safeshield/errors.hpp"

namespace safeshield::harness {

using shields::ShieldType;
using shields::TupleMode;

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, sep)) out.push_back(trim(item));
    if (!text.empty() && text.back() == sep) out.emplace_back();
    return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
    throw ConfigError("invalid value '" + value + "' for " + key + " (expected " + expected + ")");
}

double to_double(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty() || !std::isfinite(v))
        bad_value(key, text, "a finite number");
    return v;
}

long long to_integer(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    // Accept 1e4-style literals as long as they denote an integer.
    const double v = to_double(key, t);
    if (v != std::floor(v) || std::abs(v) > 9.0e15) bad_value(key, text, "an integer");
    return static_cast<long long>(v);
}

long long to_nonnegative(const std::string& key, const std::string& text) {
    const long long v = to_integer(key, text);
    if (v < 0) bad_value(key, text, "a non-negative integer");
    return v;
}

std::uint64_t to_seed(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) bad_value(key, text, "an unsigned integer");
    return v;
}

bool to_bool(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
    if (t == "false" || t == "0" || t == "no" || t == "off") return false;
    bad_value(key, text, "true or false");
}

Vector to_vector(const std::string& key, const std::string& text) {
    const auto items = split(trim(text), ',');
    if (items.empty()) bad_value(key, text, "a comma-separated list of numbers");
    Vector v(static_cast<Eigen::Index>(items.size()));
    for (std::size_t i = 0; i < items.size(); ++i) v(static_cast<Eigen::Index>(i)) = to_double(key, items[i]);
    return v;
}

Matrix to_matrix(const std::string& key, const std::string& text) {
    const auto rows = split(trim(text), ';');
    std::vector<Vector> parsed;
    for (const auto& r : rows) parsed.push_back(to_vector(key, r));
    if (parsed.empty()) bad_value(key, text, "matrix rows separated by ';'");
    Matrix m(static_cast<Eigen::Index>(parsed.size()), parsed.front().size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        if (parsed[i].size() != m.cols()) bad_value(key, text, "matrix rows of equal length");
        m.row(static_cast<Eigen::Index>(i)) = parsed[i].transpose();
    }
    return m;
}

std::string join(const std::vector<std::string>& parts, const char* sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
    return out;
}

std::string format_vector(const Vector& v) {
    std::vector<std::string> parts;
    for (Eigen::Index i = 0; i < v.size(); ++i) parts.push_back(format_number(v(i)));
    return join(parts, ",");
}

std::string format_matrix(const Matrix& m) {
    std::vector<std::string> rows;
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(format_vector(m.row(i).transpose()));
    return join(rows, ";");
}

template <typename T>
std::string format_list(const std::vector<T>& items) {
    std::vector<std::string> parts;
    for (const auto& x : items) {
        if constexpr (std::is_arithmetic_v<T>) parts.push_back(std::to_string(x));
        else parts.push_back(shields::to_string(x));
    }
    return join(parts, ",");
}

std::vector<int> to_hidden(const std::string& key, const std::string& text) {
    std::vector<int> out;
    for (const auto& item : split(trim(text), ',')) {
        const long long n = to_integer(key, item);
        if (n < 1 || n > 100000) bad_value(key, text, "positive layer widths");
        out.push_back(static_cast<int>(n));
    }
    if (out.empty()) bad_value(key, text, "at least one hidden layer");
    return out;
}

bool is_dqn(const ExperimentConfig& c) { return c.train.agent == rl::AgentKind::dqn; }

struct KeyHandler {
    const char* key;
    const char* help;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

/// Applies to both learners; reads back from the active one.
template <typename T>
KeyHandler shared_agent_key(const char* key, const char* help, T rl::DqnConfig::*dqn_field, T rl::Td3Config::*td3_field,
                            std::function<T(const std::string&, const std::string&)> parse,
                            std::function<std::string(const T&)> print) {
    return {key, help,
            [=](ExperimentConfig& c, const std::string& v) {
                const T x = parse(key, v);
                c.train.dqn.*dqn_field = x;
                c.train.td3.*td3_field = x;
            },
            [=](const ExperimentConfig& c) {
                return print(is_dqn(c) ? c.train.dqn.*dqn_field : c.train.td3.*td3_field);
            }};
}

std::string print_double(const double& v) { return format_number(v); }
template <typename T>
std::string print_int(const T& v) { return std::to_string(v); }

double parse_double(const std::string& k, const std::string& v) { return to_double(k, v); }
double parse_positive(const std::string& k, const std::string& v) {
    const double x = to_double(k, v);
    if (!(x > 0.0)) bad_value(k, v, "a positive number");
    return x;
}
template <typename T>
T parse_count(const std::string& k, const std::string& v) {
    return static_cast<T>(to_nonnegative(k, v));
}

const std::vector<KeyHandler>& handlers() {
    static const std::vector<KeyHandler> table = [] {
        std::vector<KeyHandler> h;
        const auto noop = [](ExperimentConfig&, const std::string&) {};

        // Environment ------------------------------------------------------
        h.push_back({"env.name", "benchmark: pendulum or quadrotor (selects every env-specific default)", noop,
                     [](const ExperimentConfig& c) { return env::to_string(c.spec.kind); }});
        h.push_back({"env.dt", "integration time step in seconds",
                     [](ExperimentConfig& c, const std::string& v) { c.spec.dt = parse_positive("env.dt", v); },
                     [](const ExperimentConfig& c) { return format_number(c.spec.dt); }});
        h.push_back({"env.horizon", "steps per episode",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.spec.horizon = static_cast<int>(to_nonnegative("env.horizon", v));
                     },
                     [](const ExperimentConfig& c) { return std::to_string(c.spec.horizon); }});
        h.push_back({"env.disturbance.lower", "lower corner of the disturbance box (comma-separated)", noop,
                     [](const ExperimentConfig& c) { return format_vector(c.spec.disturbance_box.lower()); }});
        h.push_back({"env.disturbance.upper", "upper corner of the disturbance box (comma-separated)", noop,
                     [](const ExperimentConfig& c) { return format_vector(c.spec.disturbance_box.upper()); }});
        h.push_back({"env.seed", "salt mixed into every run's environment generator (0 = none)",
                     [](ExperimentConfig& c, const std::string& v) { c.env_seed = to_seed("env.seed", v); },
                     [](const ExperimentConfig& c) { return std::to_string(c.env_seed); }});
        h.push_back({"env.reset_scale", "start states are drawn from s* + scale * (bounding box of the safe set - s*)",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.reset.scale = to_double("env.reset_scale", v);
                         if (!(c.reset.scale > 0.0 && c.reset.scale <= 1.0)) bad_value("env.reset_scale", v, "(0, 1]");
                     },
                     [](const ExperimentConfig& c) { return format_number(c.reset.scale); }});

        // Safety -----------------------------------------------------------
        h.push_back({"safety.set_path", "safe-set file; loaded when safety.compute is false, written when it is true",
                     [](ExperimentConfig& c, const std::string& v) { c.set_path = trim(v); },
                     [](const ExperimentConfig& c) { return c.set_path; }});
        h.push_back({"safety.compute", "compute the invariant set instead of loading safety.set_path",
                     [](ExperimentConfig& c, const std::string& v) { c.compute_set = to_bool("safety.compute", v); },
                     [](const ExperimentConfig& c) { return std::string(c.compute_set ? "true" : "false"); }});
        h.push_back({"safety.gain", "failsafe feedback gain K, rows separated by ';' (dlqr = LQR default)",
                     [](ExperimentConfig& c, const std::string& v) {
                         if (trim(v) == "dlqr" || trim(v).empty()) c.gain.reset();
                         else c.gain = to_matrix("safety.gain", v);
                     },
                     [](const ExperimentConfig& c) { return c.gain ? format_matrix(*c.gain) : std::string("dlqr"); }});
        h.push_back({"safety.spec_box.lower", "lower corner of the safe-state specification box", noop,
                     [](const ExperimentConfig& c) { return format_vector(c.spec_box.lower()); }});
        h.push_back({"safety.spec_box.upper", "upper corner of the safe-state specification box", noop,
                     [](const ExperimentConfig& c) { return format_vector(c.spec_box.upper()); }});

        // Shield -----------------------------------------------------------
        h.push_back({"shield.type",
                     "comma-separated list from none, replace_sample, replace_failsafe, project, mask (or all)",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.shields.clear();
                         if (trim(v) == "all") {
                             c.shields = {ShieldType::none, ShieldType::replace_sample, ShieldType::replace_failsafe,
                                          ShieldType::project, ShieldType::mask};
                             return;
                         }
                         for (const auto& item : split(trim(v), ',')) c.shields.push_back(shields::shield_type_from_string(item));
                         if (c.shields.empty()) bad_value("shield.type", v, "at least one shield type");
                     },
                     [](const ExperimentConfig& c) { return format_list(c.shields); }});
        h.push_back({"shield.tuple", "comma-separated list from naive, adaption_penalty, safe_action, both (or all)",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.tuples.clear();
                         if (trim(v) == "all") {
                             c.tuples = {TupleMode::naive, TupleMode::adaption_penalty, TupleMode::safe_action,
                                         TupleMode::both};
                             return;
                         }
                         for (const auto& item : split(trim(v), ',')) c.tuples.push_back(shields::tuple_mode_from_string(item));
                         if (c.tuples.empty()) bad_value("shield.tuple", v, "at least one tuple mode");
                     },
                     [](const ExperimentConfig& c) { return format_list(c.tuples); }});
        h.push_back({"shield.penalty", "reward added on intervened steps in adaption-penalty tuples",
                     [](ExperimentConfig& c, const std::string& v) { c.train.shield.penalty = to_double("shield.penalty", v); },
                     [](const ExperimentConfig& c) { return format_number(c.train.shield.penalty); }});
        h.push_back({"shield.proj_dist_coef", "reward coefficient on the projection distance in adaption-penalty tuples",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.train.shield.proj_dist_coef = to_double("shield.proj_dist_coef", v);
                     },
                     [](const ExperimentConfig& c) { return format_number(c.train.shield.proj_dist_coef); }});

        // Agent ------------------------------------------------------------
        h.push_back({"agent.name", "learner: dqn (discrete action grid) or td3 (continuous)", noop,
                     [](const ExperimentConfig& c) { return rl::to_string(c.train.agent); }});
        h.push_back({"agent.steps", "training steps per run",
                     [](ExperimentConfig& c, const std::string& v) { c.train.steps = parse_count<long>("agent.steps", v); },
                     [](const ExperimentConfig& c) { return std::to_string(c.train.steps); }});
        h.push_back(shared_agent_key<double>("agent.lr", "learning rate", &rl::DqnConfig::lr, &rl::Td3Config::lr,
                                             parse_positive, print_double));
        h.push_back(shared_agent_key<double>("agent.gamma", "discount factor in (0, 1)", &rl::DqnConfig::gamma,
                                             &rl::Td3Config::gamma, parse_double, print_double));
        h.push_back(shared_agent_key<int>("agent.batch", "minibatch size", &rl::DqnConfig::batch, &rl::Td3Config::batch,
                                          parse_count<int>, print_int<int>));
        h.push_back(shared_agent_key<std::size_t>("agent.buffer", "replay capacity", &rl::DqnConfig::buffer,
                                                  &rl::Td3Config::buffer, parse_count<std::size_t>,
                                                  print_int<std::size_t>));
        h.push_back(shared_agent_key<long>("agent.learning_starts", "random-action warmup steps before updates",
                                           &rl::DqnConfig::learning_starts, &rl::Td3Config::learning_starts,
                                           parse_count<long>, print_int<long>));
        h.push_back(shared_agent_key<long>("agent.train_freq", "environment steps between update rounds",
                                           &rl::DqnConfig::train_freq, &rl::Td3Config::train_freq, parse_count<long>,
                                           print_int<long>));
        h.push_back(shared_agent_key<int>("agent.gradient_steps", "gradient steps per update round",
                                          &rl::DqnConfig::gradient_steps, &rl::Td3Config::gradient_steps,
                                          parse_count<int>, print_int<int>));
        h.push_back(shared_agent_key<std::vector<int>>(
            "agent.hidden", "hidden layer widths (comma-separated)", &rl::DqnConfig::hidden, &rl::Td3Config::hidden,
            to_hidden, [](const std::vector<int>& v) { return format_list(v); }));
        h.push_back(shared_agent_key<rl::Activation>(
            "agent.activation", "hidden activation: relu or tanh", &rl::DqnConfig::activation,
            &rl::Td3Config::activation, [](const std::string&, const std::string& v) { return rl::activation_from_string(trim(v)); },
            [](const rl::Activation& a) { return rl::to_string(a); }));
        h.push_back(shared_agent_key<rl::OptimizerKind>(
            "agent.optimizer", "sgd or adam", &rl::DqnConfig::optimizer, &rl::Td3Config::optimizer,
            [](const std::string&, const std::string& v) { return rl::optimizer_from_string(trim(v)); },
            [](const rl::OptimizerKind& k) { return rl::to_string(k); }));

        h.push_back({"agent.grid", "dqn: grid points per action dimension",
                     [](ExperimentConfig& c, const std::string& v) { c.train.grid_points = parse_count<int>("agent.grid", v); },
                     [](const ExperimentConfig& c) { return std::to_string(c.train.grid_points); }});
        h.push_back({"agent.target_update", "dqn: environment steps between hard target-network copies",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.train.dqn.target_update = parse_count<long>("agent.target_update", v);
                     },
                     [](const ExperimentConfig& c) { return std::to_string(c.train.dqn.target_update); }});
        h.push_back({"agent.grad_clip", "dqn: maximum gradient norm (0 disables clipping)",
                     [](ExperimentConfig& c, const std::string& v) { c.train.dqn.max_grad_norm = to_double("agent.grad_clip", v); },
                     [](const ExperimentConfig& c) { return format_number(c.train.dqn.max_grad_norm); }});
        h.push_back({"agent.eps_initial", "dqn: initial exploration probability",
                     [](ExperimentConfig& c, const std::string& v) { c.train.dqn.eps_initial = to_double("agent.eps_initial", v); },
                     [](const ExperimentConfig& c) { return format_number(c.train.dqn.eps_initial); }});
        h.push_back({"agent.eps_final", "dqn: final exploration probability",
                     [](ExperimentConfig& c, const std::string& v) { c.train.dqn.eps_final = to_double("agent.eps_final", v); },
                     [](const ExperimentConfig& c) { return format_number(c.train.dqn.eps_final); }});
        h.push_back({"agent.eps_steps", "dqn: steps of linear interpolation between the exploration probabilities",
                     [](ExperimentConfig& c, const std::string& v) { c.train.dqn.eps_steps = parse_count<long>("agent.eps_steps", v); },
                     [](const ExperimentConfig& c) { return std::to_string(c.train.dqn.eps_steps); }});
        h.push_back({"agent.sigma", "td3: Gaussian exploration noise in normalized action units",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.train.td3.exploration_sigma = to_double("agent.sigma", v);
                     },
                     [](const ExperimentConfig& c) { return format_number(c.train.td3.exploration_sigma); }});
        h.push_back({"agent.tau", "td3: Polyak coefficient of the target networks",
                     [](ExperimentConfig& c, const std::string& v) { c.train.td3.tau = to_double("agent.tau", v); },
                     [](const ExperimentConfig& c) { return format_number(c.train.td3.tau); }});
        h.push_back({"agent.policy_delay", "td3: critic updates per actor update",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.train.td3.policy_delay = parse_count<int>("agent.policy_delay", v);
                     },
                     [](const ExperimentConfig& c) { return std::to_string(c.train.td3.policy_delay); }});
        h.push_back({"agent.target_noise", "td3: target policy smoothing noise",
                     [](ExperimentConfig& c, const std::string& v) { c.train.td3.target_noise = to_double("agent.target_noise", v); },
                     [](const ExperimentConfig& c) { return format_number(c.train.td3.target_noise); }});
        h.push_back({"agent.noise_clip", "td3: clip of the target smoothing noise",
                     [](ExperimentConfig& c, const std::string& v) { c.train.td3.noise_clip = to_double("agent.noise_clip", v); },
                     [](const ExperimentConfig& c) { return format_number(c.train.td3.noise_clip); }});

        // Experiment -------------------------------------------------------
        h.push_back({"run.seeds", "comma-separated run seeds",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.seeds.clear();
                         for (const auto& item : split(trim(v), ',')) c.seeds.push_back(to_seed("run.seeds", item));
                         if (c.seeds.empty()) bad_value("run.seeds", v, "at least one seed");
                     },
                     [](const ExperimentConfig& c) { return format_list(c.seeds); }});
        h.push_back({"run.output_dir", "directory for CSVs and the manifest (SAFESHIELD_OUT overrides)",
                     [](ExperimentConfig& c, const std::string& v) { c.output_dir = trim(v); },
                     [](const ExperimentConfig& c) { return c.output_dir; }});
        h.push_back({"run.eval_episodes", "deployment episodes per trained agent",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.eval_episodes = parse_count<int>("run.eval_episodes", v);
                     },
                     [](const ExperimentConfig& c) { return std::to_string(c.eval_episodes); }});
        h.push_back({"run.eval_every", "training steps between greedy evaluations (0 disables)",
                     [](ExperimentConfig& c, const std::string& v) { c.train.eval_every = parse_count<long>("run.eval_every", v); },
                     [](const ExperimentConfig& c) { return std::to_string(c.train.eval_every); }});
        h.push_back({"run.eval_curve_episodes", "episodes per periodic greedy evaluation",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.train.eval_episodes = parse_count<int>("run.eval_curve_episodes", v);
                     },
                     [](const ExperimentConfig& c) { return std::to_string(c.train.eval_episodes); }});
        h.push_back({"run.eval_seed", "seed of the evaluation episodes",
                     [](ExperimentConfig& c, const std::string& v) { c.train.eval_seed = to_seed("run.eval_seed", v); },
                     [](const ExperimentConfig& c) { return std::to_string(c.train.eval_seed); }});
        std::sort(h.begin(), h.end(), [](const KeyHandler& a, const KeyHandler& b) {
            return std::string(a.key) < std::string(b.key);
        });
        return h;
    }();
    return table;
}

const KeyHandler* find_handler(const std::string& key) {
    for (const auto& h : handlers())
        if (key == h.key) return &h;
    return nullptr;
}

/// Box keys are applied as a pair so that moving both corners never passes
/// through an inverted box.
Box resolve_box(const KeyValues& values, const std::string& prefix, const Box& fallback) {
    Vector lo = fallback.lower(), hi = fallback.upper();
    if (auto it = values.find(prefix + ".lower"); it != values.end()) lo = to_vector(it->first, it->second);
    if (auto it = values.find(prefix + ".upper"); it != values.end()) hi = to_vector(it->first, it->second);
    if (lo.size() != fallback.dim() || hi.size() != fallback.dim())
        throw ConfigError(prefix + " needs " + std::to_string(fallback.dim()) + " entries per corner");
    if ((lo.array() > hi.array()).any()) throw ConfigError(prefix + ".lower exceeds " + prefix + ".upper");
    return Box(lo, hi);
}

}  // namespace

// ---------------------------------------------------------------------------

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

KeyValues parse_config_text(const std::string& text, const std::string& source) {
    KeyValues out;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(source + ":" + std::to_string(number) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ParseError(source + ":" + std::to_string(number) + ": empty key");
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

KeyValues read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config_text(text.str(), path);
}

const std::vector<KeyDoc>& config_keys() {
    static const std::vector<KeyDoc> docs = [] {
        std::vector<KeyDoc> out;
        for (const auto& h : handlers()) out.push_back({h.key, h.help});
        return out;
    }();
    return docs;
}

ExperimentConfig default_config(env::EnvKind kind, rl::AgentKind agent) {
    ExperimentConfig c;
    c.spec = kind == env::EnvKind::pendulum ? env::EnvSpec::pendulum() : env::EnvSpec::quadrotor();
    c.spec_box = safety::default_spec_box(c.spec);
    c.train.agent = agent;
    if (kind == env::EnvKind::pendulum) {
        c.train.steps = 60000;
        c.train.grid_points = 15;
        // Library defaults already carry the pendulum hyperparameters.
    } else {
        c.train.steps = 200000;
        c.train.grid_points = 5;
        auto& t = c.train.td3;
        t.hidden = {64, 64};
        t.lr = 2e-3;
        t.buffer = 100000;
        t.gamma = 0.98;
        t.learning_starts = 100;
        t.train_freq = 5;
        t.gradient_steps = 10;
        t.batch = 512;
        t.tau = 5e-3;
        t.target_noise = 0.12;
        auto& d = c.train.dqn;
        d.hidden = {64, 64};
        d.lr = 1e-4;
        d.buffer = 1000000;
        d.gamma = 0.99999;
        d.learning_starts = 100;
        d.train_freq = 2;
        d.gradient_steps = 4;
        d.batch = 64;
        d.max_grad_norm = 100.0;
        d.target_update = 1000;
        d.eps_initial = 0.137;
        d.eps_final = 0.004;
        d.eps_steps = 10000;
    }
    return c;
}

ExperimentConfig resolve_config(const KeyValues& values) {
    for (const auto& [key, value] : values)
        if (!find_handler(key)) throw ConfigError("unknown configuration key '" + key + "'");
    const auto pick = [&](const std::string& key, const std::string& fallback) {
        const auto it = values.find(key);
        return it == values.end() ? fallback : trim(it->second);
    };
    ExperimentConfig c = default_config(env::env_kind_from_string(pick("env.name", "pendulum")),
                                        rl::agent_kind_from_string(pick("agent.name", "td3")));
    c.spec.disturbance_box = resolve_box(values, "env.disturbance", c.spec.disturbance_box);
    c.spec_box = resolve_box(values, "safety.spec_box", c.spec_box);
    for (const auto& [key, value] : values) find_handler(key)->set(c, value);

    c.spec.validate();
    if (c.spec_box.dim() != c.spec.state_dim()) throw ConfigError("safety.spec_box has the wrong dimension");
    if (!c.spec_box.contains(c.spec.equilibrium)) throw ConfigError("safety.spec_box must contain the equilibrium");
    if (!c.compute_set && c.set_path.empty()) throw ConfigError("safety.set_path is required when safety.compute is false");
    if (c.gain && (c.gain->rows() != c.spec.action_dim() || c.gain->cols() != c.spec.state_dim()))
        throw ConfigError("safety.gain must be " + std::to_string(c.spec.action_dim()) + "x" +
                          std::to_string(c.spec.state_dim()));
    if (c.seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
    rl::TrainConfig probe = c.train;
    probe.shield = {};
    probe.validate();
    if (experiment_grid(c).empty())
        throw ConfigError("no valid shield/tuple combination in the configured grid");
    return c;
}

KeyValues describe(const ExperimentConfig& config) {
    KeyValues out;
    for (const auto& h : handlers()) out[h.key] = h.get(config);
    return out;
}

std::string output_dir(const ExperimentConfig& config) {
    if (const char* env = std::getenv("SAFESHIELD_OUT"); env && *env) return env;
    return config.output_dir;
}

std::vector<std::pair<ShieldType, TupleMode>> experiment_grid(const ExperimentConfig& config) {
    std::vector<std::pair<ShieldType, TupleMode>> out;
    for (auto s : config.shields)
        for (auto t : config.tuples)
            if (shields::is_valid_combination(s, t, config.train.discrete())) out.emplace_back(s, t);
    return out;
}

SafetyStack build_safety(const ExperimentConfig& config) {
    SafetyStack st;
    st.spec_box = config.spec_box;
    st.model = safety::model_for(config.spec, st.spec_box);
    st.failsafe = safety::default_failsafe(config.spec, st.model);
    if (config.gain) st.failsafe.gain = *config.gain;
    const auto spec_poly = geom::HPolytope::from_box(st.spec_box);
    safety::SafeSet set;
    if (config.compute_set) {
        set = safety::compute_invariant_set(st.model, st.failsafe, spec_poly, config.spec.disturbance_box);
        if (!config.set_path.empty())
            safety::save_safe_set(config.set_path, set, "safe set for " + env::to_string(config.spec.kind));
    } else {
        set = safety::load_safe_set(config.set_path);
    }
    safety::check_safe_set(set, config.spec.equilibrium, spec_poly);
    if (!config.compute_set && !safety::verify_failsafe(set, st.failsafe, st.model, config.spec.disturbance_box))
        throw CertificateError("safe set '" + config.set_path + "' is not invariant under the failsafe controller");
    st.ctx = std::make_unique<safety::SafetyContext>(st.model, set, config.spec.disturbance_box, config.spec.action_box,
                                                     st.failsafe);
    st.problem = rl::Problem{config.spec, st.spec_box, st.model, st.ctx.get(), config.reset};
    return st;
}

InterventionSummary intervention_rate(const std::vector<shields::ShieldDecision>& decisions, ShieldType type,
                                      const Box& action_box, double equilibrium_volume) {
    if (decisions.empty()) throw PreconditionError("intervention_rate needs at least one decision");
    InterventionSummary out;
    if (type != ShieldType::mask) {
        const auto n = std::count_if(decisions.begin(), decisions.end(), [](const auto& d) { return d.intervened; });
        out.rate = static_cast<double>(n) / static_cast<double>(decisions.size());
        return out;
    }
    if (!(equilibrium_volume > 0.0))
        throw ConfigError("masking intervention rate needs a positive equilibrium safe-action volume");
    const double full = geom::box_volume(action_box);
    const auto m = static_cast<double>(action_box.dim());
    double total = 0.0;
    for (const auto& d : decisions) total += d.mask_scale ? full * std::pow(*d.mask_scale, m) : 0.0;
    out.raw_ratio = total / static_cast<double>(decisions.size()) / equilibrium_volume;
    out.rate = std::clamp(1.0 - out.raw_ratio, 0.0, 1.0);
    return out;
}

bool ExperimentResult::safety_abort() const {
    return std::any_of(runs.begin(), runs.end(), [](const RunRecord& r) { return r.aborted; });
}

const char* const kRunCsvHeader = "step,episode,return,intervention_rate,mask_volume_ratio,violations,shield,tuple,agent,seed";

namespace {

void mean_std_sorted(std::vector<double> v, double* mean, double* sd) {
    if (std::any_of(v.begin(), v.end(), [](double x) { return std::isnan(x); })) {
        *mean = *sd = std::numeric_limits<double>::quiet_NaN();
        return;
    }
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    *mean = sum / static_cast<double>(v.size());
    std::vector<double> sq;
    for (double x : v) sq.push_back((x - *mean) * (x - *mean));
    std::sort(sq.begin(), sq.end());
    double ss = 0.0;
    for (double x : sq) ss += x;
    *sd = std::sqrt(ss / static_cast<double>(v.size()));
}

std::string run_row(const rl::EpisodeLog& e, const std::string& shield, const std::string& tuple,
                    const std::string& agent, std::uint64_t seed) {
    return std::to_string(e.end_step) + "," + std::to_string(e.episode) + "," + format_number(e.return_mean) + "," +
           format_number(e.intervention_rate) + "," + format_number(e.mask_volume_ratio) + "," +
           std::to_string(e.violations) + "," + shield + "," + tuple + "," + agent + "," + std::to_string(seed);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
}

nlohmann::json matrix_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<const std::vector<rl::EpisodeLog>*>& runs) {
    std::size_t longest = 0;
    for (const auto* r : runs) longest = std::max(longest, r->size());
    std::vector<AggregateRow> out;
    for (std::size_t i = 0; i < longest; ++i) {
        std::vector<double> ret, inter, ratio, viol;
        long step = std::numeric_limits<long>::max();
        for (const auto* r : runs) {
            if (i >= r->size()) continue;
            const auto& e = (*r)[i];
            ret.push_back(e.return_mean);
            inter.push_back(e.intervention_rate);
            ratio.push_back(e.mask_volume_ratio);
            viol.push_back(e.violations);
            step = std::min(step, e.end_step);
        }
        AggregateRow row;
        row.episode = static_cast<int>(i);
        row.step = step;
        row.runs = static_cast<int>(ret.size());
        mean_std_sorted(ret, &row.return_mean, &row.return_std);
        mean_std_sorted(inter, &row.intervention_mean, &row.intervention_std);
        mean_std_sorted(ratio, &row.mask_ratio_mean, &row.mask_ratio_std);
        mean_std_sorted(viol, &row.violations_mean, &row.violations_std);
        out.push_back(row);
    }
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* progress) {
    namespace fs = std::filesystem;
    ExperimentResult result;
    result.directory = output_dir(config);
    const fs::path dir(result.directory);
    fs::create_directories(dir);

    const SafetyStack st = build_safety(config);
    const auto grid = experiment_grid(config);
    const std::string agent_name = rl::to_string(config.train.agent);

    for (const auto& [shield, tuple] : grid) {
        for (std::size_t k = 0; k < config.seeds.size(); ++k) {
            RunRecord rec;
            rec.shield = shield;
            rec.tuple = tuple;
            rec.seed = config.seeds[k];
            const std::string sname = shields::to_string(shield), tname = shields::to_string(tuple);
            rec.csv = "run_" + agent_name + "_" + sname + "_" + tname + "_" + std::to_string(k) + "_seed" +
                      std::to_string(rec.seed) + ".csv";
            rl::TrainConfig tc = config.train;
            tc.shield.type = shield;
            tc.shield.tuple = tuple;
            tc.seed = rec.seed;
            tc.env_seed = config.env_seed;

            std::ofstream csv(dir / rec.csv, std::ios::binary);
            if (!csv) throw ConfigError("cannot write '" + (dir / rec.csv).string() + "'");
            csv << kRunCsvHeader << '\n';
            csv.flush();
            rl::RunLog log;
            try {
                rl::Agent agent = rl::make_agent(tc, st.problem);
                log = rl::train(tc, st.problem, agent, [&](const rl::EpisodeLog& e) {
                    csv << run_row(e, sname, tname, agent_name, rec.seed) << '\n';
                    csv.flush();
                    rec.episodes.push_back(e);
                    rec.violations += e.violations;
                });
            } catch (const SafetyViolation& e) {
                rec.aborted = true;
                rec.error = e.what();
            } catch (const ContractViolation& e) {
                rec.aborted = true;
                rec.error = e.what();
            }
            if (!log.evaluations.empty()) {
                std::string text = "step,mean_return\n";
                for (const auto& p : log.evaluations) text += std::to_string(p.step) + "," + format_number(p.mean_return) + "\n";
                write_text(dir / (rec.csv.substr(0, rec.csv.size() - 4) + ".eval.csv"), text);
            }
            if (progress) {
                *progress << rec.csv << ": " << rec.episodes.size() << " episodes, " << rec.violations
                          << " violations" << (rec.aborted ? ", ABORTED: " + rec.error : std::string()) << '\n';
            }
            result.runs.push_back(std::move(rec));
        }
    }

    std::string agg =
        "shield,tuple,agent,episode,step,runs,return_mean,return_std,intervention_rate_mean,intervention_rate_std,"
        "mask_volume_ratio_mean,mask_volume_ratio_std,violations_mean,violations_std\n";
    for (const auto& [shield, tuple] : grid) {
        std::vector<const std::vector<rl::EpisodeLog>*> cell;
        for (const auto& r : result.runs)
            if (r.shield == shield && r.tuple == tuple) cell.push_back(&r.episodes);
        for (const auto& row : aggregate(cell)) {
            agg += shields::to_string(shield) + "," + shields::to_string(tuple) + "," + agent_name + "," +
                   std::to_string(row.episode) + "," + std::to_string(row.step) + "," + std::to_string(row.runs) + "," +
                   format_number(row.return_mean) + "," + format_number(row.return_std) + "," +
                   format_number(row.intervention_mean) + "," + format_number(row.intervention_std) + "," +
                   format_number(row.mask_ratio_mean) + "," + format_number(row.mask_ratio_std) + "," +
                   format_number(row.violations_mean) + "," + format_number(row.violations_std) + "\n";
        }
    }
    result.aggregate_csv = "aggregate.csv";
    write_text(dir / result.aggregate_csv, agg);

    nlohmann::json manifest;
    manifest["config"] = describe(config);
    nlohmann::json resolved;
    resolved["failsafe_gain"] = matrix_json(st.failsafe.gain);
    resolved["safe_set_halfspaces"] = st.ctx->polytope().rows();
    resolved["safe_set_source"] = config.compute_set ? "computed" : "loaded";
    resolved["equilibrium"] = std::vector<double>(config.spec.equilibrium.data(),
                                                  config.spec.equilibrium.data() + config.spec.equilibrium.size());
    if (config.train.discrete()) {
        nlohmann::json actions = nlohmann::json::array();
        for (const auto& a : rl::action_grid(config.spec.action_box, config.train.grid_points))
            actions.push_back(std::vector<double>(a.data(), a.data() + a.size()));
        resolved["action_grid"] = actions;
    }
    manifest["resolved"] = resolved;
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : result.runs) {
        runs.push_back({{"shield", shields::to_string(r.shield)},
                        {"tuple", shields::to_string(r.tuple)},
                        {"seed", r.seed},
                        {"csv", r.csv},
                        {"episodes", r.episodes.size()},
                        {"violations", r.violations},
                        {"status", r.aborted ? "aborted" : "ok"},
                        {"error", r.error}});
    }
    manifest["runs"] = runs;
    manifest["aggregate"] = result.aggregate_csv;
    manifest["status"] = result.safety_abort() ? "safety_abort" : "ok";
    result.manifest = "manifest.json";
    write_text(dir / result.manifest, manifest.dump(2) + "\n");
    return result;
}

rl::EvalSummary evaluate_deployment(const rl::TrainConfig& train, const rl::Problem& problem, const rl::Agent& agent,
                                    int episodes, std::uint64_t seed) {
    return rl::evaluate(train, problem, agent, episodes, seed);
}

rl::EvalSummary pool(const std::vector<rl::EvalSummary>& parts) {
    rl::EvalSummary out;
    std::vector<const rl::EvalSummary*> used;
    for (const auto& p : parts)
        if (p.episodes > 0) used.push_back(&p);
    if (used.empty()) return out;
    const double n = static_cast<double>(used.size());
    const auto combine = [&](double rl::EvalSummary::*mean, double rl::EvalSummary::*sd, double* m_out, double* s_out) {
        double m = 0.0, second = 0.0;
        for (const auto* p : used) {
            m += p->*mean;
            second += p->*sd * (p->*sd) + p->*mean * (p->*mean);
        }
        m /= n;
        *m_out = m;
        *s_out = std::sqrt(std::max(0.0, second / n - m * m));
    };
    for (const auto* p : used) out.episodes += p->episodes;
    combine(&rl::EvalSummary::return_mean, &rl::EvalSummary::return_std, &out.return_mean, &out.return_std);
    combine(&rl::EvalSummary::intervention_mean, &rl::EvalSummary::intervention_std, &out.intervention_mean,
            &out.intervention_std);
    combine(&rl::EvalSummary::violation_mean, &rl::EvalSummary::violation_std, &out.violation_mean,
            &out.violation_std);
    return out;
}

std::vector<DeploymentRow> run_deployment(const ExperimentConfig& config, std::ostream* progress) {
    namespace fs = std::filesystem;
    const fs::path dir(output_dir(config));
    fs::create_directories(dir);
    const SafetyStack st = build_safety(config);
    std::vector<DeploymentRow> rows;
    for (const auto& [shield, tuple] : experiment_grid(config)) {
        std::vector<rl::EvalSummary> parts;
        for (auto seed : config.seeds) {
            rl::TrainConfig tc = config.train;
            tc.shield.type = shield;
            tc.shield.tuple = tuple;
            tc.seed = seed;
            tc.env_seed = config.env_seed;
            rl::Agent agent = rl::make_agent(tc, st.problem);
            rl::train(tc, st.problem, agent);
            parts.push_back(evaluate_deployment(tc, st.problem, agent, config.eval_episodes,
                                                rl::derive_seed(seed, 99)));
        }
        rows.push_back({shields::to_string(shield), shields::to_string(tuple), static_cast<int>(parts.size()),
                        pool(parts)});
        if (progress) *progress << rows.back().shield << "/" << rows.back().tuple << " deployed\n";
    }
    std::vector<rl::EvalSummary> failsafe;
    for (auto seed : config.seeds)
        failsafe.push_back(rl::evaluate_failsafe(st.problem, config.eval_episodes, rl::derive_seed(seed, 99)));
    rows.push_back({"failsafe_only", "-", static_cast<int>(failsafe.size()), pool(failsafe)});

    std::string text =
        "shield,tuple,agent,seeds,episodes,return_mean,return_std,intervention_rate_mean,intervention_rate_std,"
        "violation_mean,violation_std\n";
    for (const auto& r : rows) {
        text += r.shield + "," + r.tuple + "," + rl::to_string(config.train.agent) + "," + std::to_string(r.seeds) +
                "," + std::to_string(r.summary.episodes) + "," + format_number(r.summary.return_mean) + "," +
                format_number(r.summary.return_std) + "," + format_number(r.summary.intervention_mean) + "," +
                format_number(r.summary.intervention_std) + "," + format_number(r.summary.violation_mean) + "," +
                format_number(r.summary.violation_std) + "\n";
    }
    write_text(dir / "deployment.csv", text);
    return rows;
}

}  // namespace safeshield::harness
