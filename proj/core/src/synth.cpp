#include "ethos/synth.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ethos/ares.hpp"
#include "ethos/parallel.hpp"
#include "ethos/rng.hpp"

namespace ethos {
namespace {

using nlohmann::json;

constexpr size_t kMaxChainSteps = 400;

// Inverse-CDF draw that can only land on positive-probability entries.
size_t draw_categorical(Rng& rng, const std::vector<double>& probs) {
    const double u = rng.uniform01();
    double cum = 0.0;
    size_t fallback = 0;
    for (size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        fallback = i;
        cum += probs[i];
        if (u < cum) return i;
    }
    return fallback;
}

std::vector<size_t> transient_indices(const GeneratorSpec& spec) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < spec.states.size(); ++i)
        if (!spec.states[i].absorbing) idx.push_back(i);
    return idx;
}

std::vector<size_t> absorbing_indices(const GeneratorSpec& spec) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < spec.states.size(); ++i)
        if (spec.states[i].absorbing) idx.push_back(i);
    return idx;
}

// Absorption probabilities from every transient state into every absorbing
// state: solve (I - Q) B = R.
Eigen::MatrixXd absorption_matrix(const GeneratorSpec& spec) {
    const auto trans = transient_indices(spec);
    const auto abs = absorbing_indices(spec);
    const auto t = static_cast<Eigen::Index>(trans.size());
    const auto a = static_cast<Eigen::Index>(abs.size());
    if (a == 0) throw std::runtime_error("no absorption: spec has no absorbing state");
    if (t == 0) return Eigen::MatrixXd(0, a);

    Eigen::MatrixXd Q(t, t), R(t, a);
    for (Eigen::Index i = 0; i < t; ++i) {
        for (Eigen::Index j = 0; j < t; ++j) Q(i, j) = spec.transition[trans[static_cast<size_t>(i)]][trans[static_cast<size_t>(j)]];
        for (Eigen::Index j = 0; j < a; ++j) R(i, j) = spec.transition[trans[static_cast<size_t>(i)]][abs[static_cast<size_t>(j)]];
    }
    const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(t, t) - Q;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
    if (!lu.isInvertible()) throw std::runtime_error("no absorption: transient system is singular");
    return lu.solve(R);
}

double role_probability(const GeneratorSpec& spec, size_t start, const std::string& role) {
    if (spec.states[start].absorbing) return spec.states[start].role == role ? 1.0 : 0.0;
    const auto trans = transient_indices(spec);
    const auto abs = absorbing_indices(spec);
    const Eigen::MatrixXd B = absorption_matrix(spec);
    const auto row = static_cast<Eigen::Index>(
        std::distance(trans.begin(), std::find(trans.begin(), trans.end(), start)));
    double p = 0.0;
    for (size_t j = 0; j < abs.size(); ++j)
        if (spec.states[abs[j]].role == role) p += B(row, static_cast<Eigen::Index>(j));
    return p;
}

}  // namespace

void GeneratorSpec::validate() const {
    const size_t n = states.size();
    if (n == 0) throw std::invalid_argument("generator spec has no states");
    if (transition.size() != n) throw std::invalid_argument("transition matrix must be square over the states");
    if (initial.size() != n) throw std::invalid_argument("initial distribution size mismatch");
    for (size_t i = 0; i < n; ++i) {
        if (transition[i].size() != n) throw std::invalid_argument("transition matrix must be square");
        double sum = 0.0;
        for (double p : transition[i]) {
            if (p < 0.0) throw std::invalid_argument("negative transition probability");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("transition row does not sum to 1");
        if (states[i].absorbing) {
            for (size_t j = 0; j < n; ++j) {
                if (transition[i][j] != (i == j ? 1.0 : 0.0))
                    throw std::invalid_argument("absorbing state row must be identity");
            }
            if (states[i].marker.empty()) throw std::invalid_argument("absorbing state needs a marker code");
        }
    }
    double isum = 0.0;
    for (double p : initial) {
        if (p < 0.0) throw std::invalid_argument("negative initial probability");
        isum += p;
    }
    if (std::abs(isum - 1.0) > 1e-9) throw std::invalid_argument("initial distribution does not sum to 1");
    if (!(step_hours > 0.0)) throw std::invalid_argument("step_hours must be positive");
    if (step_sigma < 0.0) throw std::invalid_argument("step_sigma must be non-negative");

    // Every transient state must reach some absorbing state; the linear
    // solve both checks this and is the oracle itself.
    const auto trans = transient_indices(*this);
    if (!trans.empty()) {
        const Eigen::MatrixXd B = absorption_matrix(*this);
        for (Eigen::Index i = 0; i < B.rows(); ++i) {
            if (B.row(i).sum() < 1.0 - 1e-6)
                throw std::invalid_argument("no absorption: transient state cannot reach an absorbing state");
        }
    }
}

size_t GeneratorSpec::state_index(const std::string& name) const {
    for (size_t i = 0; i < states.size(); ++i)
        if (states[i].name == name) return i;
    throw std::out_of_range("unknown state '" + name + "'");
}

std::string GeneratorSpec::to_json() const {
    json j;
    json states_j = json::array();
    for (const auto& s : states) {
        json sj;
        sj["name"] = s.name;
        sj["absorbing"] = s.absorbing;
        if (!s.marker.empty()) sj["marker"] = s.marker;
        if (!s.role.empty()) sj["role"] = s.role;
        sj["acuity"] = s.acuity;
        json em = json::array();
        for (const auto& e : s.emissions) {
            json ej;
            ej["code"] = e.code;
            if (e.text) ej["text"] = *e.text;
            if (e.mean) ej["mean"] = *e.mean;
            if (e.sd) ej["sd"] = *e.sd;
            em.push_back(ej);
        }
        sj["emissions"] = em;
        states_j.push_back(sj);
    }
    j["states"] = states_j;
    j["transition"] = transition;
    j["initial"] = initial;
    j["step_hours"] = step_hours;
    j["step_sigma"] = step_sigma;
    j["prolonged_days"] = prolonged_days;
    j["emit_statics"] = emit_statics;
    j["emit_ed_block"] = emit_ed_block;
    return j.dump(2);
}

GeneratorSpec GeneratorSpec::from_json(const std::string& text) {
    const json j = json::parse(text);
    GeneratorSpec spec;
    for (const auto& sj : j.at("states")) {
        ChainState s;
        s.name = sj.at("name").get<std::string>();
        s.absorbing = sj.value("absorbing", false);
        s.marker = sj.value("marker", std::string{});
        s.role = sj.value("role", std::string{});
        s.acuity = sj.value("acuity", 0.0);
        if (sj.contains("emissions")) {
            for (const auto& ej : sj["emissions"]) {
                StateEmission e;
                e.code = ej.at("code").get<std::string>();
                if (ej.contains("text")) e.text = ej["text"].get<std::string>();
                if (ej.contains("mean")) e.mean = ej["mean"].get<double>();
                if (ej.contains("sd")) e.sd = ej["sd"].get<double>();
                s.emissions.push_back(std::move(e));
            }
        }
        spec.states.push_back(std::move(s));
    }
    spec.transition = j.at("transition").get<std::vector<std::vector<double>>>();
    spec.initial = j.at("initial").get<std::vector<double>>();
    spec.step_hours = j.value("step_hours", 6.0);
    spec.step_sigma = j.value("step_sigma", 0.0);
    spec.prolonged_days = j.value("prolonged_days", 10.0);
    spec.emit_statics = j.value("emit_statics", true);
    spec.emit_ed_block = j.value("emit_ed_block", true);
    spec.validate();
    return spec;
}

GeneratorSpec GeneratorSpec::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) throw std::runtime_error("cannot open generator spec '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

void GeneratorSpec::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out.is_open()) throw std::runtime_error("cannot write generator spec '" + path + "'");
    out << to_json() << "\n";
}

GeneratorSpec default_generator_spec() {
    GeneratorSpec spec;

    ChainState stable;
    stable.name = "stable";
    stable.acuity = 1.0;
    stable.emissions = {{"VITAL//SYN_HR", std::nullopt, 72.0, 6.0},
                        {"LAB//SYN_LACT//MMOL_L", std::nullopt, 1.0, 0.3}};
    ChainState det;
    det.name = "deteriorating";
    det.acuity = 2.0;
    det.emissions = {{"VITAL//SYN_HR", std::nullopt, 96.0, 7.0},
                     {"LAB//SYN_LACT//MMOL_L", std::nullopt, 2.4, 0.5}};
    ChainState crit;
    crit.name = "critical";
    crit.acuity = 3.0;
    crit.emissions = {{"VITAL//SYN_HR", std::nullopt, 122.0, 8.0},
                      {"LAB//SYN_LACT//MMOL_L", std::nullopt, 4.8, 0.8}};
    ChainState discharged;
    discharged.name = "discharged";
    discharged.absorbing = true;
    discharged.marker = kHospitalDischarge;
    discharged.role = "discharge";
    ChainState dead;
    dead.name = "dead";
    dead.absorbing = true;
    dead.marker = kDeath;
    dead.role = "death";

    spec.states = {stable, det, crit, discharged, dead};
    spec.transition = {
        {0.60, 0.02, 0.00, 0.3775, 0.0025},
        {0.10, 0.58, 0.16, 0.1000, 0.0600},
        {0.00, 0.04, 0.66, 0.0400, 0.2600},
        {0.00, 0.00, 0.00, 1.0000, 0.0000},
        {0.00, 0.00, 0.00, 0.0000, 1.0000},
    };
    spec.initial = {0.76, 0.16, 0.08, 0.0, 0.0};
    spec.step_hours = 6.0;
    spec.step_sigma = 0.0;
    spec.prolonged_days = 10.0;
    spec.validate();
    return spec;
}

double oracle_probability(const GeneratorSpec& spec, const std::string& start_state,
                          const std::string& target_absorbing) {
    spec.validate();
    const size_t start = spec.state_index(start_state);
    const size_t target = spec.state_index(target_absorbing);
    if (!spec.states[target].absorbing) throw std::invalid_argument("target state is not absorbing");
    if (spec.states[start].absorbing) return start == target ? 1.0 : 0.0;

    const auto trans = transient_indices(spec);
    const auto abs = absorbing_indices(spec);
    const Eigen::MatrixXd B = absorption_matrix(spec);
    const auto row = static_cast<Eigen::Index>(
        std::distance(trans.begin(), std::find(trans.begin(), trans.end(), start)));
    const auto col = static_cast<Eigen::Index>(
        std::distance(abs.begin(), std::find(abs.begin(), abs.end(), target)));
    return B(row, col);
}

double oracle_prolonged_probability(const GeneratorSpec& spec, const std::string& start_state) {
    spec.validate();
    if (spec.step_sigma > 0.0) return std::nan("");
    const size_t start = spec.state_index(start_state);
    if (spec.states[start].absorbing) return 0.0;

    // Fixed step duration: the stay exceeds the threshold iff the chain is
    // still transient after floor(threshold / step) steps.
    const double step_seconds = spec.step_hours * kHour;
    const auto m = static_cast<size_t>(std::floor(spec.prolonged_days * kDay / step_seconds));
    const auto trans = transient_indices(spec);
    const auto t = static_cast<Eigen::Index>(trans.size());
    Eigen::MatrixXd Q(t, t);
    for (Eigen::Index i = 0; i < t; ++i)
        for (Eigen::Index j = 0; j < t; ++j)
            Q(i, j) = spec.transition[trans[static_cast<size_t>(i)]][trans[static_cast<size_t>(j)]];
    Eigen::RowVectorXd mass = Eigen::RowVectorXd::Zero(t);
    for (Eigen::Index i = 0; i < t; ++i)
        if (trans[static_cast<size_t>(i)] == start) mass(i) = 1.0;
    for (size_t k = 0; k < m; ++k) mass = mass * Q;
    return mass.sum();
}

OracleCohort generate_cohort(const GeneratorSpec& spec, size_t n_subjects, std::uint64_t seed,
                             unsigned threads) {
    spec.validate();
    if (n_subjects < 1) throw std::invalid_argument("cohort needs at least one subject");

    // Start-state outcome probabilities, computed once.
    std::vector<double> p_death(spec.states.size(), 0.0), p_icu(spec.states.size(), 0.0),
        p_prolonged(spec.states.size(), 0.0);
    for (size_t s = 0; s < spec.states.size(); ++s) {
        p_death[s] = role_probability(spec, s, "death");
        p_icu[s] = role_probability(spec, s, "icu");
        p_prolonged[s] = spec.states[s].absorbing ? 0.0 : oracle_prolonged_probability(spec, spec.states[s].name);
    }

    const auto base_time = *parse_timestamp("2150-01-01 00:00:00");
    const double step_mu = std::log(spec.step_hours * kHour);

    std::vector<std::vector<Event>> per_subject(n_subjects);
    std::vector<OracleRow> rows(n_subjects);

    parallel_for(n_subjects, threads, [&](size_t i) {
        Rng rng(derive_seed(seed, i));
        std::vector<Event>& events = per_subject[i];
        char id_buf[24];
        std::snprintf(id_buf, sizeof(id_buf), "SYN%06zu", i);
        const std::string subject_id = id_buf;

        const TimePoint t0 = base_time + static_cast<TimePoint>(rng.below(30000)) * 86400 +
                             static_cast<TimePoint>(rng.below(86400));
        auto emit = [&](TimePoint t, std::string code, std::optional<double> numeric,
                        std::optional<std::string> text) {
            events.push_back(Event{subject_id, t, std::move(code), numeric, std::move(text)});
        };

        if (spec.emit_statics) {
            emit(t0, rng.uniform01() < 0.5 ? "GENDER//F" : "GENDER//M", std::nullopt, std::nullopt);
            emit(t0, "AGE", 20.0 + std::floor(rng.uniform01() * 70.0), std::nullopt);
            emit(t0, "BMI", rng.normal(27.0, 4.0), std::nullopt);
            static const char* kRaces[] = {"RACE//WHITE", "RACE//BLACK", "RACE//ASIAN", "RACE//HISPANIC"};
            emit(t0, kRaces[rng.below(4)], std::nullopt, std::nullopt);
        }

        size_t state = draw_categorical(rng, spec.initial);

        OracleRow row;
        row.subject_id = subject_id;
        row.start_state = spec.states[state].name;
        row.p_death = p_death[state];
        row.p_icu = p_icu[state];
        row.p_prolonged = p_prolonged[state];

        if (spec.emit_ed_block) {
            emit(t0, kEdRegistration, std::nullopt, std::nullopt);
            emit(t0, kEdAcuity, spec.states[state].acuity, std::nullopt);
        }
        const TimePoint admission_time = t0 + 30 * 60;
        emit(admission_time, kHospitalAdmission, std::nullopt, std::nullopt);

        if (spec.states[state].absorbing) {
            emit(admission_time + 60, spec.states[state].marker, std::nullopt, std::nullopt);
            row.outcome = spec.states[state].name;
        } else {
            TimePoint t = admission_time;
            for (size_t k = 0; k < kMaxChainSteps; ++k) {
                t += static_cast<TimePoint>(std::llround(rng.lognormal(step_mu, spec.step_sigma)));
                const size_t next = draw_categorical(rng, spec.transition[state]);
                if (spec.states[next].absorbing) {
                    emit(t, spec.states[next].marker, std::nullopt, std::nullopt);
                    row.outcome = spec.states[next].name;
                    break;
                }
                state = next;
                for (const auto& e : spec.states[state].emissions) {
                    std::optional<double> numeric;
                    if (e.mean) numeric = rng.normal(*e.mean, e.sd.value_or(0.0));
                    emit(t, e.code, numeric, e.text);
                }
                if (k + 1 == kMaxChainSteps) {
                    // Safety net for near-reducible specs; validated specs
                    // reach this with vanishing probability.
                    for (size_t s = 0; s < spec.states.size(); ++s) {
                        if (spec.states[s].absorbing && spec.states[s].role == "discharge") {
                            emit(t + 60, spec.states[s].marker, std::nullopt, std::nullopt);
                            row.outcome = spec.states[s].name;
                            break;
                        }
                    }
                }
            }
        }
        rows[i] = std::move(row);
    });

    std::vector<Event> all;
    for (auto& evs : per_subject)
        for (auto& ev : evs) all.push_back(std::move(ev));

    OracleCohort cohort;
    cohort.stream = EventStream::from_events(std::move(all));
    cohort.rows = std::move(rows);
    return cohort;
}

std::string oracle_sidecar_csv(const OracleCohort& cohort) {
    std::ostringstream out;
    out << "subject_id,p_death,p_icu,p_prolonged,start_state\n";
    for (const auto& row : cohort.rows) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g", row.p_death, row.p_icu, row.p_prolonged);
        out << row.subject_id << ',' << buf << ',' << row.start_state << "\n";
    }
    return out.str();
}

std::vector<OracleRow> parse_oracle_sidecar(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) throw std::runtime_error("cannot open oracle sidecar '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty oracle sidecar");
    std::vector<OracleRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        OracleRow row;
        std::string field;
        std::getline(ss, row.subject_id, ',');
        std::getline(ss, field, ',');
        row.p_death = std::stod(field);
        std::getline(ss, field, ',');
        row.p_icu = std::stod(field);
        std::getline(ss, field, ',');
        row.p_prolonged = std::stod(field);
        std::getline(ss, row.start_state, ',');
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace ethos
