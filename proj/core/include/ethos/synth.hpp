#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ethos/event_store.hpp"

namespace ethos {

struct StateEmission {
    std::string code;
    std::optional<std::string> text;
    std::optional<double> mean;  // numeric emission ~ N(mean, sd)
    std::optional<double> sd;
};

struct ChainState {
    std::string name;
    bool absorbing = false;
    std::string marker;  // event code emitted on absorption
    std::string role;    // "death", "icu", "discharge" or empty
    double acuity = 0.0; // value of the triage acuity emission
    std::vector<StateEmission> emissions;
};

// Discrete-time absorbing Markov chain over health states with per-state
// event emissions. Outcome probabilities are analytic, which makes the
// generated cohorts usable as ground truth.
struct GeneratorSpec {
    std::vector<ChainState> states;
    std::vector<std::vector<double>> transition;  // square, rows sum to 1
    std::vector<double> initial;
    double step_hours = 6.0;
    double step_sigma = 0.0;  // lognormal sigma of the step duration; 0 = fixed
    double prolonged_days = 10.0;
    bool emit_statics = true;
    bool emit_ed_block = true;

    void validate() const;
    size_t state_index(const std::string& name) const;

    std::string to_json() const;
    static GeneratorSpec from_json(const std::string& text);
    static GeneratorSpec load(const std::string& path);
    void save(const std::string& path) const;
};

// The cohort used by the end-to-end checks: three transient severity states
// with distinct vital/lab emissions, absorbing discharge and death, overall
// death prevalence around 16%.
GeneratorSpec default_generator_spec();

// Exact absorbing probability from a start state into one absorbing state
// (fundamental-matrix linear solve, f64). Throws "no absorption" when the
// transient system is singular.
double oracle_probability(const GeneratorSpec& spec, const std::string& start_state,
                          const std::string& target_absorbing);

// Probability that absorption happens after the prolonged-stay threshold.
// Exact for fixed step durations; NaN when step_sigma > 0.
double oracle_prolonged_probability(const GeneratorSpec& spec, const std::string& start_state);

struct OracleRow {
    std::string subject_id;
    std::string start_state;
    std::string outcome;  // name of the absorbing state reached
    double p_death = 0.0;
    double p_icu = 0.0;
    double p_prolonged = 0.0;
};

struct OracleCohort {
    EventStream stream;
    std::vector<OracleRow> rows;
};

// Simulates n subjects with derived per-subject seeds; emits marker codes
// compatible with the tokenizer namespaces, so the cohort runs through the
// whole pipeline.
OracleCohort generate_cohort(const GeneratorSpec& spec, size_t n_subjects, std::uint64_t seed,
                             unsigned threads = 1);

// Sidecar format: subject_id, p_death, p_icu, p_prolonged, start_state.
std::string oracle_sidecar_csv(const OracleCohort& cohort);
std::vector<OracleRow> parse_oracle_sidecar(const std::string& path);

}  // namespace ethos
