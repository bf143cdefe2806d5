#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ethos/simulator.hpp"
#include "ethos/tokenizer.hpp"

namespace ethos {

// Marker codes shared between the tokenizer namespaces, the synthetic
// generator and the task presets.
inline constexpr const char* kHospitalAdmission = "HOSPITAL_ADMISSION";
inline constexpr const char* kHospitalDischarge = "HOSPITAL_DISCHARGE";
inline constexpr const char* kIcuAdmission = "ICU_ADMISSION";
inline constexpr const char* kDeath = "MEDS_DEATH";
inline constexpr const char* kEdRegistration = "ED_REGISTRATION";
inline constexpr const char* kEdOut = "ED_OUT";
inline constexpr const char* kEdAcuity = "ED_ACUITY";

enum class TaskKind { token_event, duration_exceeds, composite };
enum class TaskAnchor { admission, triage, ed_discharge, index };

// One clinical endpoint: either "this token appears in scope", "the stay
// clock exceeds a threshold", or the union of member tasks counted jointly
// on shared trajectories.
struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::token_event;
    std::set<std::string> positive_tokens;
    std::set<std::string> negative_tokens;  // scope enders (non-event)
    std::optional<Seconds> horizon;         // within X of the anchor
    double threshold_days = 0.0;            // duration_exceeds only
    TaskAnchor anchor = TaskAnchor::admission;
    std::vector<std::string> components;    // composite member names

    void validate() const;
};

// Built-in endpoints: hospital mortality, ICU admission, prolonged stay at
// 10 and 15 days (threshold configurable), their composite, plus the three
// emergency-department tasks (hospitalization at triage, critical outcome
// within 12h, re-presentation within 72h).
std::vector<TaskSpec> preset_tasks(double prolonged_stay_days = 10.0);

std::string tasks_to_json(const std::vector<TaskSpec>& tasks);
std::vector<TaskSpec> tasks_from_json(const std::string& text);

// Ordinal risk bucket in 20% bins: [0,.2)->1, [.2,.4)->2, ..., [.8,1]->5.
int risk_level(double p);

// Which tasks still apply at a timeline position, derived purely from the
// context: events that already happened deactivate their task, a finished
// episode deactivates everything admission-anchored, and a stay past the
// prolonged-stay threshold swaps in the longer-horizon variant.
struct AresState {
    bool episode_active = false;
    bool in_icu = false;
    std::optional<Seconds> elapsed_stay;
    std::set<std::string> deactivated;
    std::map<std::string, std::string> replacements;  // old task -> new task
    std::set<std::string> new_components;

    bool is_active(const std::string& task_name) const { return !deactivated.count(task_name); }
};

AresState update_lifecycle(const std::vector<TaskSpec>& tasks, const TokenizedTimeline& timeline,
                           size_t position, const Vocabulary& vocab, double prolonged_stay_days = 10.0);

enum class TaskOutcome { positive, negative, excluded };

struct TaskScore {
    TaskOutcome outcome = TaskOutcome::negative;
    std::optional<Seconds> event_time;
};

// Scores one generated trajectory against one task (members of a composite
// are scored on the same trajectory, which is what makes composite counting
// joint).
TaskScore score_trajectory(const Trajectory& traj, const TaskSpec& task,
                           const std::vector<TaskSpec>& all_tasks, const Vocabulary& vocab);

struct AresOptions {
    size_t n = 100;
    double top_p = 1.0;
    size_t max_tokens = 4096;
    unsigned threads = 1;
};

struct TaskRisk {
    std::string task;
    RiskEstimate estimate;
    int level = 1;
};

struct AresEvaluation {
    size_t position = 0;
    std::uint64_t seed = 0;
    size_t n_total = 0;
    size_t n_valid = 0;
    size_t discarded = 0;
    std::vector<TaskRisk> results;
};

// One shared trajectory set per (position, seed), reused across every task
// and the composite. Explicitly requesting a deactivated task throws.
AresEvaluation evaluate_risks(const TokenModel& model, const TokenizedTimeline& timeline, size_t position,
                              const std::vector<TaskSpec>& tasks, const AresState& state,
                              std::uint64_t seed, const Vocabulary& vocab, const AresOptions& opts = {});

struct RiskTrajectoryPoint {
    size_t position = 0;
    TimePoint wall_time = 0;
    std::vector<TaskRisk> results;
    std::vector<std::string> inactive;
    std::vector<std::string> new_components;
};

struct RiskTrajectory {
    std::vector<RiskTrajectoryPoint> points;
    size_t stride = 1;
    std::uint64_t seed = 0;
};

// Evaluates every stride-th position from the end of the static prefix to
// the final token, applying lifecycle updates at each point.
RiskTrajectory risk_trajectory(const TokenModel& model, const TokenizedTimeline& timeline,
                               const std::vector<TaskSpec>& tasks, size_t stride, std::uint64_t seed,
                               const Vocabulary& vocab, const AresOptions& opts = {},
                               double prolonged_stay_days = 10.0);

std::string risk_trajectory_csv(const RiskTrajectory& traj, const std::vector<TaskSpec>& tasks);

struct AttributionEntry {
    size_t position = 0;  // evaluation point where the step landed
    double delta = 0.0;
    std::string tokens;   // human-readable tokens entering between the points
};

// Ranks consecutive-point risk changes for one task by |delta|, ties going
// to the earlier position; k larger than the point count returns everything.
std::vector<AttributionEntry> attribute_deltas(const RiskTrajectory& traj, const TokenizedTimeline& timeline,
                                               const Vocabulary& vocab, const std::string& task, size_t k);

// Token index where evaluation anchors: the admission marker, the triage
// block (acuity, falling back to registration), or the ED departure.
// Nullopt when the timeline has no such marker.
std::optional<size_t> find_anchor(const TokenizedTimeline& timeline, TaskAnchor anchor,
                                  const Vocabulary& vocab);

// Ground-truth outcome of a task read off the real timeline after the
// anchor, using wall-clock elapsed time. Used to label scored sets.
TaskScore observed_outcome(const TokenizedTimeline& timeline, size_t position, const TaskSpec& task,
                           const std::vector<TaskSpec>& all_tasks, const Vocabulary& vocab);

}  // namespace ethos
