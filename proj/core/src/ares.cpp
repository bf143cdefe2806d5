#include "ethos/ares.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ethos/parallel.hpp"

namespace ethos {
namespace {

using nlohmann::json;

std::string day_label(double days) {
    if (days == std::floor(days)) return std::to_string(static_cast<long long>(days)) + "d";
    std::ostringstream out;
    out << days << "d";
    return out.str();
}

const TaskSpec& find_task(const std::vector<TaskSpec>& tasks, const std::string& name) {
    for (const auto& t : tasks)
        if (t.name == name) return t;
    throw std::runtime_error("unknown task '" + name + "'");
}

std::set<TokenId> resolve_tokens(const std::set<std::string>& names, const Vocabulary& vocab) {
    std::set<TokenId> ids;
    for (const auto& n : names) {
        if (auto id = vocab.id_of(n)) ids.insert(*id);
    }
    return ids;
}

// Leaf tasks of a (possibly composite) task list, composites expanded.
std::vector<const TaskSpec*> expand_leaves(const std::vector<TaskSpec>& requested,
                                           const std::vector<TaskSpec>& all_tasks) {
    std::vector<const TaskSpec*> leaves;
    for (const auto& t : requested) {
        if (t.kind == TaskKind::composite) {
            for (const auto& member : t.components) leaves.push_back(&find_task(all_tasks, member));
        } else {
            leaves.push_back(&t);
        }
    }
    return leaves;
}

// Generation must continue until every leaf task is decided: a token may
// stop generation only if it decides all of them. The simulated-time limit
// applies only when every leaf is bounded by a horizon or threshold.
StopSpec build_generation_stop(const std::vector<const TaskSpec*>& leaves, const Vocabulary& vocab,
                               size_t max_tokens) {
    StopSpec stop;
    stop.max_tokens = max_tokens;

    bool all_bounded = true;
    Seconds max_bound = 0.0;
    std::vector<std::set<TokenId>> decided_by;
    for (const TaskSpec* leaf : leaves) {
        std::set<TokenId> decided = resolve_tokens(leaf->negative_tokens, vocab);
        if (leaf->kind == TaskKind::token_event) {
            for (TokenId id : resolve_tokens(leaf->positive_tokens, vocab)) decided.insert(id);
            if (leaf->horizon) max_bound = std::max(max_bound, *leaf->horizon);
            else all_bounded = false;
        } else {
            max_bound = std::max(max_bound, leaf->threshold_days * kDay);
        }
        decided_by.push_back(std::move(decided));
    }
    if (!decided_by.empty()) {
        for (TokenId id : decided_by.front()) {
            bool everywhere = true;
            for (const auto& s : decided_by) {
                if (!s.count(id)) {
                    everywhere = false;
                    break;
                }
            }
            if (everywhere) stop.negative_tokens.insert(id);
        }
    }
    if (all_bounded) stop.horizon = max_bound + 1.0;
    return stop;
}

}  // namespace

void TaskSpec::validate() const {
    if (name.empty()) throw std::invalid_argument("task name must not be empty");
    switch (kind) {
        case TaskKind::token_event:
            if (positive_tokens.empty()) throw std::invalid_argument("token_event task needs positive tokens");
            for (const auto& t : positive_tokens)
                if (negative_tokens.count(t))
                    throw std::invalid_argument("task '" + name + "': positive and negative tokens overlap");
            break;
        case TaskKind::duration_exceeds:
            if (!(threshold_days > 0.0)) throw std::invalid_argument("duration task needs a positive threshold");
            break;
        case TaskKind::composite:
            if (components.empty()) throw std::invalid_argument("composite task needs members");
            break;
    }
    if (horizon && !(*horizon > 0.0)) throw std::invalid_argument("task horizon must be positive");
}

std::vector<TaskSpec> preset_tasks(double prolonged_stay_days) {
    if (!(prolonged_stay_days > 0.0)) throw std::invalid_argument("prolonged stay threshold must be positive");
    const double long_days = prolonged_stay_days * 1.5;
    const std::string ps_name = "prolonged_stay_" + day_label(prolonged_stay_days);
    const std::string ps_long_name = "prolonged_stay_" + day_label(long_days);

    std::vector<TaskSpec> tasks;

    TaskSpec hm;
    hm.name = "hospital_mortality";
    hm.kind = TaskKind::token_event;
    hm.positive_tokens = {kDeath};
    hm.negative_tokens = {kHospitalDischarge, kTimelineEndToken};
    hm.anchor = TaskAnchor::admission;
    tasks.push_back(hm);

    TaskSpec ia;
    ia.name = "icu_admission";
    ia.kind = TaskKind::token_event;
    ia.positive_tokens = {kIcuAdmission};
    ia.negative_tokens = {kHospitalDischarge, kDeath, kTimelineEndToken};
    ia.anchor = TaskAnchor::admission;
    tasks.push_back(ia);

    TaskSpec ps;
    ps.name = ps_name;
    ps.kind = TaskKind::duration_exceeds;
    ps.threshold_days = prolonged_stay_days;
    ps.negative_tokens = {kHospitalDischarge, kDeath, kTimelineEndToken};
    ps.anchor = TaskAnchor::admission;
    tasks.push_back(ps);

    TaskSpec ps_long = ps;
    ps_long.name = ps_long_name;
    ps_long.threshold_days = long_days;
    tasks.push_back(ps_long);

    TaskSpec composite;
    composite.name = "composite_hm_ia_ps";
    composite.kind = TaskKind::composite;
    composite.components = {hm.name, ia.name, ps_name};
    composite.anchor = TaskAnchor::admission;
    tasks.push_back(composite);

    TaskSpec hosp;
    hosp.name = "hospitalization_at_triage";
    hosp.kind = TaskKind::token_event;
    hosp.positive_tokens = {kHospitalAdmission};
    hosp.negative_tokens = {kEdOut, kTimelineEndToken};
    hosp.anchor = TaskAnchor::triage;
    tasks.push_back(hosp);

    TaskSpec critical;
    critical.name = "critical_outcome_12h";
    critical.kind = TaskKind::token_event;
    critical.positive_tokens = {kDeath, kIcuAdmission};
    critical.negative_tokens = {kTimelineEndToken};
    critical.horizon = 12.0 * kHour;
    critical.anchor = TaskAnchor::triage;
    tasks.push_back(critical);

    TaskSpec represent;
    represent.name = "ed_representation_72h";
    represent.kind = TaskKind::token_event;
    represent.positive_tokens = {kEdRegistration};
    represent.negative_tokens = {kTimelineEndToken};
    represent.horizon = 72.0 * kHour;
    represent.anchor = TaskAnchor::ed_discharge;
    tasks.push_back(represent);

    for (const auto& t : tasks) t.validate();
    return tasks;
}

namespace {

const char* kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::token_event: return "token_event";
        case TaskKind::duration_exceeds: return "duration_exceeds";
        case TaskKind::composite: return "composite";
    }
    return "?";
}

TaskKind kind_from(const std::string& s) {
    if (s == "token_event") return TaskKind::token_event;
    if (s == "duration_exceeds") return TaskKind::duration_exceeds;
    if (s == "composite") return TaskKind::composite;
    throw std::runtime_error("unknown task kind '" + s + "'");
}

const char* anchor_name(TaskAnchor a) {
    switch (a) {
        case TaskAnchor::admission: return "admission";
        case TaskAnchor::triage: return "triage";
        case TaskAnchor::ed_discharge: return "ed_discharge";
        case TaskAnchor::index: return "index";
    }
    return "?";
}

TaskAnchor anchor_from(const std::string& s) {
    if (s == "admission") return TaskAnchor::admission;
    if (s == "triage") return TaskAnchor::triage;
    if (s == "ed_discharge") return TaskAnchor::ed_discharge;
    if (s == "index") return TaskAnchor::index;
    throw std::runtime_error("unknown task anchor '" + s + "'");
}

}  // namespace

std::string tasks_to_json(const std::vector<TaskSpec>& tasks) {
    json arr = json::array();
    for (const auto& t : tasks) {
        json j;
        j["name"] = t.name;
        j["kind"] = kind_name(t.kind);
        j["positive_tokens"] = t.positive_tokens;
        j["negative_tokens"] = t.negative_tokens;
        if (t.horizon) j["horizon_hours"] = *t.horizon / kHour;
        if (t.kind == TaskKind::duration_exceeds) j["threshold_days"] = t.threshold_days;
        j["anchor"] = anchor_name(t.anchor);
        if (!t.components.empty()) j["components"] = t.components;
        arr.push_back(j);
    }
    return arr.dump(2);
}

std::vector<TaskSpec> tasks_from_json(const std::string& text) {
    json arr = json::parse(text);
    std::vector<TaskSpec> tasks;
    for (const auto& j : arr) {
        TaskSpec t;
        t.name = j.at("name").get<std::string>();
        t.kind = kind_from(j.at("kind").get<std::string>());
        if (j.contains("positive_tokens"))
            for (const auto& s : j["positive_tokens"]) t.positive_tokens.insert(s.get<std::string>());
        if (j.contains("negative_tokens"))
            for (const auto& s : j["negative_tokens"]) t.negative_tokens.insert(s.get<std::string>());
        if (j.contains("horizon_hours")) t.horizon = j["horizon_hours"].get<double>() * kHour;
        if (j.contains("threshold_days")) t.threshold_days = j["threshold_days"].get<double>();
        if (j.contains("anchor")) t.anchor = anchor_from(j["anchor"].get<std::string>());
        if (j.contains("components"))
            for (const auto& s : j["components"]) t.components.push_back(s.get<std::string>());
        t.validate();
        tasks.push_back(std::move(t));
    }
    return tasks;
}

int risk_level(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("risk_level: probability outside [0,1]");
    if (p < 0.2) return 1;
    if (p < 0.4) return 2;
    if (p < 0.6) return 3;
    if (p < 0.8) return 4;
    return 5;
}

AresState update_lifecycle(const std::vector<TaskSpec>& tasks, const TokenizedTimeline& timeline,
                           size_t position, const Vocabulary& vocab, double prolonged_stay_days) {
    if (position >= timeline.tokens.size()) throw std::out_of_range("position beyond timeline");
    AresState state;

    const auto admission_id = vocab.id_of(kHospitalAdmission);
    const auto discharge_id = vocab.id_of(kHospitalDischarge);
    const auto death_id = vocab.id_of(kDeath);

    std::optional<size_t> admission_at;
    if (admission_id) {
        for (size_t i = 0; i <= position; ++i) {
            if (timeline.tokens[i] == *admission_id) admission_at = i;
        }
    }
    bool episode_over = false;
    std::set<TokenId> seen_in_episode;
    if (admission_at) {
        for (size_t i = *admission_at + 1; i <= position; ++i) {
            const TokenId id = timeline.tokens[i];
            seen_in_episode.insert(id);
            if ((discharge_id && id == *discharge_id) || (death_id && id == *death_id)) episode_over = true;
        }
    }
    state.episode_active = admission_at.has_value() && !episode_over;
    if (state.episode_active) {
        state.elapsed_stay =
            static_cast<Seconds>(timeline.token_time[position] - timeline.token_time[*admission_at]);
        if (auto icu = vocab.id_of(kIcuAdmission)) state.in_icu = seen_in_episode.count(*icu) > 0;
    }

    // Admission-anchored single-event tasks deactivate once their event has
    // already occurred in this episode (or there is no live episode at all).
    for (const auto& t : tasks) {
        if (t.anchor != TaskAnchor::admission) continue;
        if (!state.episode_active) {
            state.deactivated.insert(t.name);
            continue;
        }
        if (t.kind == TaskKind::token_event) {
            for (const auto& tok : t.positive_tokens) {
                if (auto id = vocab.id_of(tok); id && seen_in_episode.count(*id)) {
                    state.deactivated.insert(t.name);
                    break;
                }
            }
        }
    }

    // Duration ladder: the active rung is the smallest threshold the stay
    // has not yet exceeded; crossing a rung swaps in the next one.
    if (state.episode_active) {
        std::vector<const TaskSpec*> ladder;
        for (const auto& t : tasks)
            if (t.kind == TaskKind::duration_exceeds && t.anchor == TaskAnchor::admission) ladder.push_back(&t);
        std::sort(ladder.begin(), ladder.end(),
                  [](const TaskSpec* a, const TaskSpec* b) { return a->threshold_days < b->threshold_days; });
        const Seconds elapsed = *state.elapsed_stay;
        const TaskSpec* active_rung = nullptr;
        const TaskSpec* crossed = nullptr;
        for (const TaskSpec* t : ladder) {
            if (elapsed > t->threshold_days * kDay) {
                state.deactivated.insert(t->name);
                crossed = t;
            } else if (!active_rung) {
                active_rung = t;
            } else {
                state.deactivated.insert(t->name);  // longer rungs wait their turn
            }
        }
        if (crossed && active_rung) {
            state.replacements[crossed->name] = active_rung->name;
            state.new_components.insert(active_rung->name);
        }
        (void)prolonged_stay_days;
    }

    // A composite lives as long as any member does.
    for (const auto& t : tasks) {
        if (t.kind != TaskKind::composite) continue;
        bool any_member = false;
        for (const auto& member : t.components) {
            std::string name = member;
            if (auto it = state.replacements.find(name); it != state.replacements.end()) name = it->second;
            if (state.is_active(name)) {
                any_member = true;
                break;
            }
        }
        if (!any_member) state.deactivated.insert(t.name);
    }
    return state;
}

TaskScore score_trajectory(const Trajectory& traj, const TaskSpec& task,
                           const std::vector<TaskSpec>& all_tasks, const Vocabulary& vocab) {
    TaskScore score;
    if (traj.status == TrajectoryStatus::ambiguous) {
        score.outcome = TaskOutcome::excluded;
        return score;
    }
    switch (task.kind) {
        case TaskKind::token_event: {
            const auto pos = resolve_tokens(task.positive_tokens, vocab);
            const auto neg = resolve_tokens(task.negative_tokens, vocab);
            for (size_t i = 0; i < traj.tokens.size(); ++i) {
                const Seconds at = traj.elapsed[i];
                if (task.horizon && at > *task.horizon) return score;  // out of time: negative
                if (pos.count(traj.tokens[i])) {
                    score.outcome = TaskOutcome::positive;
                    score.event_time = at;
                    return score;
                }
                if (neg.count(traj.tokens[i])) return score;
            }
            return score;
        }
        case TaskKind::duration_exceeds: {
            const auto neg = resolve_tokens(task.negative_tokens, vocab);
            const Seconds threshold = task.threshold_days * kDay;
            for (size_t i = 0; i < traj.tokens.size(); ++i) {
                if (traj.elapsed[i] > threshold) {
                    score.outcome = TaskOutcome::positive;
                    score.event_time = traj.elapsed[i];
                    return score;
                }
                if (neg.count(traj.tokens[i])) return score;
            }
            return score;
        }
        case TaskKind::composite: {
            for (const auto& member : task.components) {
                const TaskScore member_score = score_trajectory(traj, find_task(all_tasks, member), all_tasks, vocab);
                if (member_score.outcome == TaskOutcome::positive) {
                    if (!score.event_time || *member_score.event_time < *score.event_time)
                        score.event_time = member_score.event_time;
                    score.outcome = TaskOutcome::positive;
                }
            }
            return score;
        }
    }
    return score;
}

AresEvaluation evaluate_risks(const TokenModel& model, const TokenizedTimeline& timeline, size_t position,
                              const std::vector<TaskSpec>& tasks, const AresState& state,
                              std::uint64_t seed, const Vocabulary& vocab, const AresOptions& opts) {
    if (position >= timeline.tokens.size()) throw std::out_of_range("position beyond timeline");
    if (tasks.empty()) throw std::invalid_argument("no tasks to evaluate");
    for (const auto& t : tasks) {
        if (!state.is_active(t.name)) throw std::runtime_error("task deactivated: '" + t.name + "'");
    }

    // Composite members follow the lifecycle: replaced members swap in their
    // successor, deactivated members drop out.
    std::vector<TaskSpec> effective = tasks;
    for (auto& t : effective) {
        if (t.kind != TaskKind::composite) continue;
        std::vector<std::string> members;
        for (const auto& member : t.components) {
            std::string name = member;
            if (auto it = state.replacements.find(name); it != state.replacements.end()) name = it->second;
            if (state.is_active(name)) members.push_back(name);
        }
        t.components = std::move(members);
    }

    // Composite members may not be among the requested tasks themselves;
    // resolve them against requested tasks plus presets.
    std::vector<TaskSpec> catalogue = effective;
    for (const auto& t : preset_tasks()) {
        bool present = false;
        for (const auto& have : catalogue) present = present || have.name == t.name;
        if (!present) catalogue.push_back(t);
    }

    const auto leaves = expand_leaves(effective, catalogue);
    const StopSpec stop = build_generation_stop(leaves, vocab, opts.max_tokens);
    const std::vector<Seconds> durations = interval_duration_table(vocab);
    const std::span<const TokenId> context(timeline.tokens.data(), position + 1);

    std::vector<Trajectory> trajectories(opts.n);
    parallel_for(opts.n, opts.threads, [&](size_t i) {
        Rng rng(seed ^ static_cast<std::uint64_t>(i));
        trajectories[i] = generate_fpht(model, context, stop, opts.top_p, rng, durations);
    });

    AresEvaluation eval;
    eval.position = position;
    eval.seed = seed;
    eval.n_total = opts.n;
    for (const auto& traj : trajectories) {
        if (traj.status == TrajectoryStatus::ambiguous) eval.discarded += 1;
    }
    eval.n_valid = eval.n_total - eval.discarded;
    if (eval.n_valid == 0) throw std::runtime_error("all repetitions ambiguous");

    for (const auto& task : effective) {
        OutcomeCounts counts;
        counts.n_total = opts.n;
        for (const auto& traj : trajectories) {
            const TaskScore s = score_trajectory(traj, task, catalogue, vocab);
            if (s.outcome == TaskOutcome::excluded) {
                counts.discarded += 1;
                continue;
            }
            counts.n_valid += 1;
            if (s.outcome == TaskOutcome::positive) {
                counts.m_positive += 1;
                if (s.event_time) counts.event_times.push_back(*s.event_time);
            }
        }
        TaskRisk result;
        result.task = task.name;
        result.estimate = estimate_probability(counts);
        result.level = risk_level(result.estimate.p_hat);
        eval.results.push_back(std::move(result));
    }
    return eval;
}

RiskTrajectory risk_trajectory(const TokenModel& model, const TokenizedTimeline& timeline,
                               const std::vector<TaskSpec>& tasks, size_t stride, std::uint64_t seed,
                               const Vocabulary& vocab, const AresOptions& opts, double prolonged_stay_days) {
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    if (timeline.tokens.size() <= timeline.static_prefix_len)
        throw std::runtime_error("timeline shorter than its static prefix");

    const size_t first = timeline.static_prefix_len;
    const size_t last = timeline.tokens.size() - 1;
    std::vector<size_t> positions;
    for (size_t p = first; p < last; p += stride) positions.push_back(p);
    positions.push_back(last);

    RiskTrajectory out;
    out.stride = stride;
    out.seed = seed;
    for (size_t p : positions) {
        RiskTrajectoryPoint point;
        point.position = p;
        point.wall_time = timeline.token_time[p];
        const AresState state = update_lifecycle(tasks, timeline, p, vocab, prolonged_stay_days);
        point.new_components.assign(state.new_components.begin(), state.new_components.end());

        std::vector<TaskSpec> active;
        for (const auto& t : tasks) {
            if (state.is_active(t.name)) active.push_back(t);
            else point.inactive.push_back(t.name);
        }
        if (!active.empty()) {
            const AresEvaluation eval =
                evaluate_risks(model, timeline, p, active, state, derive_seed(seed, p), vocab, opts);
            point.results = eval.results;
        }
        out.points.push_back(std::move(point));
    }
    return out;
}

std::string risk_trajectory_csv(const RiskTrajectory& traj, const std::vector<TaskSpec>& tasks) {
    std::ostringstream out;
    out << "position,wall_time,task,p_hat,ci_low,ci_high,level,active_flag\n";
    for (const auto& point : traj.points) {
        for (const auto& t : tasks) {
            const TaskRisk* found = nullptr;
            for (const auto& r : point.results)
                if (r.task == t.name) found = &r;
            out << point.position << ',' << format_timestamp(point.wall_time) << ',' << t.name << ',';
            if (found) {
                out << found->estimate.p_hat << ',' << found->estimate.ci_low << ',' << found->estimate.ci_high
                    << ',' << found->level << ",1\n";
            } else {
                out << ",,,,0\n";
            }
        }
    }
    return out.str();
}

std::vector<AttributionEntry> attribute_deltas(const RiskTrajectory& traj, const TokenizedTimeline& timeline,
                                               const Vocabulary& vocab, const std::string& task, size_t k) {
    struct PointValue {
        size_t position;
        double p_hat;
    };
    std::vector<PointValue> values;
    for (const auto& point : traj.points) {
        for (const auto& r : point.results) {
            if (r.task == task) values.push_back({point.position, r.estimate.p_hat});
        }
    }
    if (values.size() < 2) throw std::runtime_error("trajectory has fewer than 2 evaluated points for task");

    std::vector<AttributionEntry> entries;
    for (size_t i = 0; i + 1 < values.size(); ++i) {
        AttributionEntry e;
        e.position = values[i + 1].position;
        e.delta = values[i + 1].p_hat - values[i].p_hat;
        std::string tokens;
        for (size_t p = values[i].position + 1; p <= values[i + 1].position && p < timeline.tokens.size(); ++p) {
            if (!tokens.empty()) tokens += " ";
            tokens += vocab.token_of(timeline.tokens[p]);
        }
        e.tokens = std::move(tokens);
        entries.push_back(std::move(e));
    }
    std::stable_sort(entries.begin(), entries.end(), [](const AttributionEntry& a, const AttributionEntry& b) {
        if (std::abs(a.delta) != std::abs(b.delta)) return std::abs(a.delta) > std::abs(b.delta);
        return a.position < b.position;
    });
    if (entries.size() > k) entries.resize(k);
    return entries;
}

std::optional<size_t> find_anchor(const TokenizedTimeline& timeline, TaskAnchor anchor,
                                  const Vocabulary& vocab) {
    auto first_of = [&](const char* token) -> std::optional<size_t> {
        const auto id = vocab.id_of(token);
        if (!id) return std::nullopt;
        for (size_t i = 0; i < timeline.tokens.size(); ++i)
            if (timeline.tokens[i] == *id) return i;
        return std::nullopt;
    };
    switch (anchor) {
        case TaskAnchor::admission: return first_of(kHospitalAdmission);
        case TaskAnchor::triage: {
            if (auto at = first_of(kEdAcuity)) return at;
            return first_of(kEdRegistration);
        }
        case TaskAnchor::ed_discharge: return first_of(kEdOut);
        case TaskAnchor::index: return std::nullopt;
    }
    return std::nullopt;
}

TaskScore observed_outcome(const TokenizedTimeline& timeline, size_t position, const TaskSpec& task,
                           const std::vector<TaskSpec>& all_tasks, const Vocabulary& vocab) {
    if (position >= timeline.tokens.size()) throw std::out_of_range("position beyond timeline");
    Trajectory suffix;
    suffix.status = TrajectoryStatus::negative;  // the recorded future is fully decided
    for (size_t i = position + 1; i < timeline.tokens.size(); ++i) {
        suffix.tokens.push_back(timeline.tokens[i]);
        suffix.elapsed.push_back(static_cast<Seconds>(timeline.token_time[i] - timeline.token_time[position]));
    }
    return score_trajectory(suffix, task, all_tasks, vocab);
}

}  // namespace ethos
