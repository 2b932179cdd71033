#pragma once

#include <memory>
#include <random>

#include "safeshield/env.hpp"
#include "safeshield/safety.hpp"

namespace fixtures {

using namespace safeshield;

/// Environment plus its certified safety machinery, built once per process.
struct Stack {
    env::EnvSpec spec;
    geom::Box spec_box;
    env::LinearModel model;
    safety::FailsafeController failsafe;
    safety::SafeSet set;
    std::unique_ptr<safety::SafetyContext> ctx;
};

inline Stack make_stack(env::EnvSpec spec) {
    Stack st;
    st.spec = spec;
    st.spec_box = safety::default_spec_box(spec);
    st.model = safety::model_for(spec, st.spec_box);
    st.failsafe = safety::default_failsafe(spec, st.model);
    st.set = safety::compute_invariant_set(st.model, st.failsafe, geom::HPolytope::from_box(st.spec_box),
                                           spec.disturbance_box);
    st.ctx = std::make_unique<safety::SafetyContext>(st.model, st.set, spec.disturbance_box, spec.action_box,
                                                     st.failsafe);
    return st;
}

inline const Stack& pendulum() {
    static const Stack st = make_stack(env::EnvSpec::pendulum());
    return st;
}

inline const Stack& quadrotor() {
    static const Stack st = make_stack(env::EnvSpec::quadrotor());
    return st;
}

inline geom::Vector uniform_in(const geom::Box& b, std::mt19937_64& rng) {
    geom::Vector x(b.dim());
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x(i) = std::uniform_real_distribution<double>(b.lower()(i), b.upper()(i))(rng);
    return x;
}

inline geom::Vector random_matrix_entry_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
    geom::Vector v(n);
    std::normal_distribution<double> nd(0.0, scale);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
    return v;
}

inline geom::Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    geom::Matrix m(r, c);
    std::normal_distribution<double> nd(0.0, scale);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = nd(rng);
    return m;
}

/// Samples states of the safe set by hit-and-run from s*.
inline std::vector<geom::Vector> states_in_set(const Stack& st, int count, std::uint64_t seed) {
    safety::PolytopeSampler sampler(st.set.polytope, st.spec.equilibrium, seed);
    std::vector<geom::Vector> out;
    for (int i = 0; i < count; ++i) {
        for (int burn = 0; burn < 3; ++burn) sampler.next();
        out.push_back(sampler.next());
    }
    return out;
}

}  // namespace fixtures
