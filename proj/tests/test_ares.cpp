#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ethos/ares.hpp"
#include "rigged_models.hpp"

using namespace ethos;
using ethos::testing::FunctionModel;
using ethos::testing::fixed_distribution_model;

namespace {

// Tokens: markers, a filler lab, three severity states and one interval.
Vocabulary ares_vocab() {
    return Vocabulary({"HOSPITAL_ADMISSION", "HOSPITAL_DISCHARGE", "MEDS_DEATH", "ICU_ADMISSION",
                       "TIMELINE_END", "LAB//X", "S1", "S2", "S3", "1d-2d", "2d-4d", "ED_REGISTRATION",
                       "ED_OUT"});
}

TokenizedTimeline admission_timeline(const Vocabulary& vocab) {
    TokenizedTimeline tl;
    tl.subject_id = "t";
    const TimePoint t0 = *parse_timestamp("2150-01-01 08:00:00");
    tl.tokens = {*vocab.id_of("HOSPITAL_ADMISSION"), *vocab.id_of("LAB//X")};
    tl.token_time = {t0, t0 + 3600};
    tl.static_prefix_len = 0;
    return tl;
}

std::vector<TaskSpec> hm_ia_ps_tasks() {
    std::vector<TaskSpec> out;
    for (const auto& t : preset_tasks()) {
        if (t.name == "hospital_mortality" || t.name == "icu_admission" ||
            t.name == "prolonged_stay_10d" || t.name == "composite_hm_ia_ps")
            out.push_back(t);
    }
    return out;
}

}  // namespace

TEST_CASE("presets contain exactly one composite with three members") {
    const auto tasks = preset_tasks();
    size_t composites = 0;
    for (const auto& t : tasks) {
        if (t.kind == TaskKind::composite) {
            ++composites;
            CHECK(t.components.size() == 3);
        }
    }
    CHECK(composites == 1);
}

TEST_CASE("the critical outcome preset has a 12 hour horizon") {
    for (const auto& t : preset_tasks()) {
        if (t.name == "critical_outcome_12h") {
            REQUIRE(t.horizon.has_value());
            CHECK(*t.horizon == doctest::Approx(12.0 * kHour));
            CHECK(t.positive_tokens.count("MEDS_DEATH") == 1);
            CHECK(t.positive_tokens.count("ICU_ADMISSION") == 1);
        }
        if (t.name == "ed_representation_72h") {
            REQUIRE(t.horizon.has_value());
            CHECK(*t.horizon == doctest::Approx(72.0 * kHour));
        }
    }
}

TEST_CASE("prolonged stay threshold is configurable") {
    const auto tasks = preset_tasks(7.0);
    bool found = false;
    for (const auto& t : tasks) {
        if (t.name == "prolonged_stay_7d") {
            found = true;
            CHECK(t.threshold_days == doctest::Approx(7.0));
        }
    }
    CHECK(found);
}

TEST_CASE("task specs round-trip through json") {
    const auto tasks = preset_tasks();
    const auto restored = tasks_from_json(tasks_to_json(tasks));
    REQUIRE(restored.size() == tasks.size());
    for (size_t i = 0; i < tasks.size(); ++i) {
        CHECK(restored[i].name == tasks[i].name);
        CHECK(restored[i].kind == tasks[i].kind);
        CHECK(restored[i].positive_tokens == tasks[i].positive_tokens);
        CHECK(restored[i].components == tasks[i].components);
    }
}

TEST_CASE("risk levels follow the 20% bins") {
    CHECK(risk_level(0.10) == 1);
    CHECK(risk_level(0.35) == 2);
    CHECK(risk_level(0.45) == 3);
    CHECK(risk_level(0.70) == 4);
    CHECK(risk_level(0.85) == 5);
    CHECK(risk_level(0.0) == 1);
    CHECK(risk_level(1.0) == 5);
    CHECK(risk_level(0.2) == 2);
    CHECK(risk_level(0.8) == 5);
    CHECK_THROWS(risk_level(-0.1));
    CHECK_THROWS(risk_level(1.1));
}

TEST_CASE("risk_level is monotone and surjective over a fine grid") {
    int prev = 1;
    bool seen[6] = {false, false, false, false, false, false};
    for (int i = 0; i <= 1000; ++i) {
        const int level = risk_level(static_cast<double>(i) / 1000.0);
        CHECK(level >= prev);
        prev = level;
        seen[level] = true;
    }
    for (int l = 1; l <= 5; ++l) CHECK(seen[l]);
}

TEST_CASE("a rigged ICU-then-discharge model gives IA 1, HM 0, composite 1") {
    const Vocabulary vocab = ares_vocab();
    const TokenId icu = *vocab.id_of("ICU_ADMISSION");
    const TokenId discharge = *vocab.id_of("HOSPITAL_DISCHARGE");
    FunctionModel model(vocab.size(), [&, icu, discharge](const std::vector<TokenId>& ctx) {
        std::vector<float> logits(vocab.size(), -80.0f);
        const bool icu_already = std::find(ctx.begin(), ctx.end(), icu) != ctx.end();
        logits[icu_already ? discharge : icu] = 0.0f;
        return logits;
    });

    const auto timeline = admission_timeline(vocab);
    const auto tasks = hm_ia_ps_tasks();
    const AresState state = update_lifecycle(tasks, timeline, 1, vocab);
    const auto eval = evaluate_risks(model, timeline, 1, tasks, state, 7, vocab);

    double hm = -1, ia = -1, comp = -1;
    for (const auto& r : eval.results) {
        if (r.task == "hospital_mortality") hm = r.estimate.p_hat;
        if (r.task == "icu_admission") ia = r.estimate.p_hat;
        if (r.task == "composite_hm_ia_ps") comp = r.estimate.p_hat;
    }
    CHECK(ia == doctest::Approx(1.0));
    CHECK(hm == doctest::Approx(0.0));
    CHECK(comp == doctest::Approx(1.0));
}

TEST_CASE("death on day 8 counts for mortality but not the 10 day stay") {
    const Vocabulary vocab = ares_vocab();
    Trajectory traj;
    traj.tokens = {*vocab.id_of("LAB//X"), *vocab.id_of("MEDS_DEATH")};
    traj.elapsed = {8.0 * kDay, 8.0 * kDay};
    traj.status = TrajectoryStatus::negative;

    const auto tasks = hm_ia_ps_tasks();
    const auto& hm = *std::find_if(tasks.begin(), tasks.end(),
                                   [](const TaskSpec& t) { return t.name == "hospital_mortality"; });
    const auto& ps = *std::find_if(tasks.begin(), tasks.end(),
                                   [](const TaskSpec& t) { return t.name == "prolonged_stay_10d"; });
    CHECK(score_trajectory(traj, hm, tasks, vocab).outcome == TaskOutcome::positive);
    CHECK(score_trajectory(traj, ps, tasks, vocab).outcome == TaskOutcome::negative);

    // Death at day 12 ends a stay that did exceed 10 days first.
    Trajectory late;
    late.tokens = {*vocab.id_of("LAB//X"), *vocab.id_of("MEDS_DEATH")};
    late.elapsed = {12.0 * kDay, 12.0 * kDay};
    late.status = TrajectoryStatus::negative;
    CHECK(score_trajectory(late, ps, tasks, vocab).outcome == TaskOutcome::positive);
}

TEST_CASE("composite stays within the union bounds on random shared evaluations") {
    const Vocabulary vocab = ares_vocab();
    const auto tasks = hm_ia_ps_tasks();
    const auto timeline = admission_timeline(vocab);
    Rng rng(31);

    for (int trial = 0; trial < 20; ++trial) {
        // Random mix over death / icu / discharge / lab / interval.
        std::vector<double> probs(vocab.size(), 0.0);
        const double d = 0.05 + 0.3 * rng.uniform01();
        const double icu = 0.05 + 0.3 * rng.uniform01();
        const double disc = 0.2 + 0.3 * rng.uniform01();
        const double gap = 0.1 + 0.2 * rng.uniform01();
        double rest = 1.0 - d - icu - disc - gap;
        probs[*vocab.id_of("MEDS_DEATH")] = d;
        probs[*vocab.id_of("ICU_ADMISSION")] = icu;
        probs[*vocab.id_of("HOSPITAL_DISCHARGE")] = disc;
        probs[*vocab.id_of("2d-4d")] = gap;
        probs[*vocab.id_of("LAB//X")] = rest;
        const auto model = fixed_distribution_model(probs);

        const AresState state = update_lifecycle(tasks, timeline, 1, vocab);
        AresOptions opts;
        opts.n = 60;
        opts.max_tokens = 512;
        const auto eval =
            evaluate_risks(model, timeline, 1, tasks, state, derive_seed(50, trial), vocab, opts);

        size_t comp_m = 0, max_m = 0, sum_m = 0;
        for (const auto& r : eval.results) {
            if (r.task == "composite_hm_ia_ps") comp_m = r.estimate.m;
            else {
                max_m = std::max(max_m, r.estimate.m);
                sum_m += r.estimate.m;
            }
        }
        CHECK(comp_m >= max_m);
        CHECK(comp_m <= sum_m);
    }
}

TEST_CASE("lifecycle deactivates ICU admission once it happened") {
    const Vocabulary vocab = ares_vocab();
    TokenizedTimeline tl;
    tl.subject_id = "t";
    const TimePoint t0 = *parse_timestamp("2150-01-01 08:00:00");
    tl.tokens = {*vocab.id_of("HOSPITAL_ADMISSION"), *vocab.id_of("ICU_ADMISSION"), *vocab.id_of("LAB//X")};
    tl.token_time = {t0, t0 + 3600, t0 + 7200};

    const auto tasks = hm_ia_ps_tasks();
    const AresState state = update_lifecycle(tasks, tl, 2, vocab);
    CHECK(state.in_icu);
    CHECK(!state.is_active("icu_admission"));
    CHECK(state.is_active("hospital_mortality"));
    CHECK(state.is_active("composite_hm_ia_ps"));

    // Requesting the deactivated task explicitly is an error.
    const auto model = fixed_distribution_model(
        [&] {
            std::vector<double> p(vocab.size(), 0.0);
            p[*vocab.id_of("HOSPITAL_DISCHARGE")] = 1.0;
            return p;
        }());
    std::vector<TaskSpec> just_ia;
    for (const auto& t : tasks)
        if (t.name == "icu_admission") just_ia.push_back(t);
    CHECK_THROWS_WITH((void)evaluate_risks(model, tl, 2, just_ia, state, 1, vocab),
                      doctest::Contains("deactivated"));
}

TEST_CASE("a stay past ten days swaps in the fifteen day component") {
    const Vocabulary vocab = ares_vocab();
    TokenizedTimeline tl;
    tl.subject_id = "t";
    const TimePoint t0 = *parse_timestamp("2150-01-01 08:00:00");
    tl.tokens = {*vocab.id_of("HOSPITAL_ADMISSION"), *vocab.id_of("LAB//X"), *vocab.id_of("LAB//X")};
    tl.token_time = {t0, t0 + static_cast<TimePoint>(3 * kDay), t0 + static_cast<TimePoint>(11 * kDay)};

    const auto tasks = preset_tasks();
    const AresState early = update_lifecycle(tasks, tl, 1, vocab);
    CHECK(early.is_active("prolonged_stay_10d"));
    CHECK(!early.is_active("prolonged_stay_15d"));  // waits its turn

    const AresState late = update_lifecycle(tasks, tl, 2, vocab);
    CHECK(!late.is_active("prolonged_stay_10d"));
    CHECK(late.is_active("prolonged_stay_15d"));
    CHECK(late.replacements.at("prolonged_stay_10d") == "prolonged_stay_15d");
    CHECK(late.new_components.count("prolonged_stay_15d") == 1);
}

TEST_CASE("discharge or death in context deactivates everything") {
    const Vocabulary vocab = ares_vocab();
    TokenizedTimeline tl;
    tl.subject_id = "t";
    const TimePoint t0 = *parse_timestamp("2150-01-01 08:00:00");
    tl.tokens = {*vocab.id_of("HOSPITAL_ADMISSION"), *vocab.id_of("HOSPITAL_DISCHARGE")};
    tl.token_time = {t0, t0 + 3600};
    const auto tasks = hm_ia_ps_tasks();
    const AresState state = update_lifecycle(tasks, tl, 1, vocab);
    for (const auto& t : tasks) CHECK(!state.is_active(t.name));
}

TEST_CASE("reclassification lowers the estimate on the same trajectories") {
    const Vocabulary vocab = ares_vocab();
    // Interval-heavy model: stays run long, so both thresholds fire often.
    std::vector<double> probs(vocab.size(), 0.0);
    probs[*vocab.id_of("2d-4d")] = 0.75;
    probs[*vocab.id_of("HOSPITAL_DISCHARGE")] = 0.2;
    probs[*vocab.id_of("MEDS_DEATH")] = 0.05;
    const auto model = fixed_distribution_model(probs);

    const auto timeline = admission_timeline(vocab);
    const auto all = preset_tasks();
    std::vector<TaskSpec> both;
    for (const auto& t : all)
        if (t.kind == TaskKind::duration_exceeds) both.push_back(t);
    REQUIRE(both.size() == 2);

    AresState state;  // everything active: compare the two on one seed
    AresOptions opts;
    opts.n = 100;
    opts.max_tokens = 256;
    const auto eval = evaluate_risks(model, timeline, 1, both, state, 99, vocab, opts);
    double p10 = -1, p15 = -1;
    for (const auto& r : eval.results) {
        if (r.task == "prolonged_stay_10d") p10 = r.estimate.p_hat;
        if (r.task == "prolonged_stay_15d") p15 = r.estimate.p_hat;
    }
    CHECK(p15 <= p10);  // event-set inclusion on shared trajectories
    CHECK(p10 > 0.0);
}

TEST_CASE("stride equal to the timeline length gives two evaluation points") {
    const Vocabulary vocab = ares_vocab();
    std::vector<double> probs(vocab.size(), 0.0);
    probs[*vocab.id_of("HOSPITAL_DISCHARGE")] = 0.7;
    probs[*vocab.id_of("MEDS_DEATH")] = 0.3;
    const auto model = fixed_distribution_model(probs);

    TokenizedTimeline tl;
    tl.subject_id = "t";
    const TimePoint t0 = *parse_timestamp("2150-01-01 08:00:00");
    for (int i = 0; i < 6; ++i) {
        tl.tokens.push_back(i == 0 ? *vocab.id_of("HOSPITAL_ADMISSION") : *vocab.id_of("LAB//X"));
        tl.token_time.push_back(t0 + i * 600);
    }
    const auto tasks = hm_ia_ps_tasks();
    AresOptions opts;
    opts.n = 30;
    const auto traj = risk_trajectory(model, tl, tasks, tl.tokens.size(), 1, vocab, opts);
    REQUIRE(traj.points.size() == 2);
    CHECK(traj.points.front().position == 0);
    CHECK(traj.points.back().position == 5);
}

TEST_CASE("a constant-hazard model yields a flat trajectory within its bands") {
    const Vocabulary vocab = ares_vocab();
    std::vector<double> probs(vocab.size(), 0.0);
    probs[*vocab.id_of("MEDS_DEATH")] = 0.3;
    probs[*vocab.id_of("HOSPITAL_DISCHARGE")] = 0.7;
    const auto model = fixed_distribution_model(probs);

    TokenizedTimeline tl;
    tl.subject_id = "t";
    const TimePoint t0 = *parse_timestamp("2150-01-01 08:00:00");
    for (int i = 0; i < 5; ++i) {
        tl.tokens.push_back(i == 0 ? *vocab.id_of("HOSPITAL_ADMISSION") : *vocab.id_of("LAB//X"));
        tl.token_time.push_back(t0 + i * 600);
    }
    std::vector<TaskSpec> hm;
    for (const auto& t : hm_ia_ps_tasks())
        if (t.name == "hospital_mortality") hm.push_back(t);
    AresOptions opts;
    opts.n = 200;
    const auto traj = risk_trajectory(model, tl, hm, 1, 11, vocab, opts);
    REQUIRE(traj.points.size() == 5);
    for (const auto& point : traj.points) {
        REQUIRE(point.results.size() == 1);
        // True hazard 0.3 must sit inside every per-point band.
        CHECK(point.results[0].estimate.ci_low <= 0.3);
        CHECK(point.results[0].estimate.ci_high >= 0.3);
    }
}

TEST_CASE("a deteriorating patient shows rising mortality with disjoint bands") {
    const Vocabulary vocab = ares_vocab();
    const TokenId s1 = *vocab.id_of("S1"), s2 = *vocab.id_of("S2"), s3 = *vocab.id_of("S3");
    // Death hazard keyed by the most recent severity token: 0.1 / 0.5 / 0.9.
    FunctionModel model(vocab.size(), [&, s1, s2, s3](const std::vector<TokenId>& ctx) {
        double hazard = 0.1;
        for (TokenId t : ctx) {
            if (t == s1) hazard = 0.1;
            if (t == s2) hazard = 0.5;
            if (t == s3) hazard = 0.9;
        }
        std::vector<float> logits(vocab.size(), -80.0f);
        logits[*vocab.id_of("MEDS_DEATH")] = static_cast<float>(std::log(hazard));
        logits[*vocab.id_of("HOSPITAL_DISCHARGE")] = static_cast<float>(std::log(1.0 - hazard));
        return logits;
    });

    TokenizedTimeline tl;
    tl.subject_id = "t";
    const TimePoint t0 = *parse_timestamp("2150-01-01 08:00:00");
    tl.tokens = {*vocab.id_of("HOSPITAL_ADMISSION"), s1, s2, s3};
    for (int i = 0; i < 4; ++i) tl.token_time.push_back(t0 + i * 3600);

    std::vector<TaskSpec> hm;
    for (const auto& t : hm_ia_ps_tasks())
        if (t.name == "hospital_mortality") hm.push_back(t);
    AresOptions opts;
    opts.n = 200;
    const auto traj = risk_trajectory(model, tl, hm, 1, 21, vocab, opts);
    REQUIRE(traj.points.size() == 4);
    const auto& first = traj.points[1].results[0].estimate;  // after S1
    const auto& last = traj.points[3].results[0].estimate;   // after S3
    CHECK(last.p_hat > first.p_hat);
    CHECK(first.ci_high < last.ci_low);  // disjoint confidence intervals
}

TEST_CASE("trajectories are deterministic given the seed") {
    const Vocabulary vocab = ares_vocab();
    std::vector<double> probs(vocab.size(), 0.0);
    probs[*vocab.id_of("MEDS_DEATH")] = 0.4;
    probs[*vocab.id_of("HOSPITAL_DISCHARGE")] = 0.6;
    const auto model = fixed_distribution_model(probs);
    const auto tl = admission_timeline(vocab);
    const auto tasks = hm_ia_ps_tasks();
    AresOptions opts;
    opts.n = 50;
    const auto a = risk_trajectory(model, tl, tasks, 1, 5, vocab, opts);
    const auto b = risk_trajectory(model, tl, tasks, 1, 5, vocab, opts);
    REQUIRE(a.points.size() == b.points.size());
    for (size_t i = 0; i < a.points.size(); ++i) {
        REQUIRE(a.points[i].results.size() == b.points[i].results.size());
        for (size_t j = 0; j < a.points[i].results.size(); ++j)
            CHECK(a.points[i].results[j].estimate.p_hat == b.points[i].results[j].estimate.p_hat);
    }
}

TEST_CASE("trajectory csv has one row per task and position") {
    const Vocabulary vocab = ares_vocab();
    std::vector<double> probs(vocab.size(), 0.0);
    probs[*vocab.id_of("HOSPITAL_DISCHARGE")] = 1.0;
    const auto model = fixed_distribution_model(probs);
    const auto tl = admission_timeline(vocab);
    const auto tasks = hm_ia_ps_tasks();
    AresOptions opts;
    opts.n = 10;
    const auto traj = risk_trajectory(model, tl, tasks, 1, 5, vocab, opts);
    const std::string csv = risk_trajectory_csv(traj, tasks);
    const size_t rows = static_cast<size_t>(std::count(csv.begin(), csv.end(), '\n'));
    CHECK(rows == 1 + traj.points.size() * tasks.size());
}

TEST_CASE("attribution ranks an injected step change first") {
    const Vocabulary vocab = ares_vocab();
    const TokenId s3 = *vocab.id_of("S3");
    // Hazard jumps from 0.2 to 0.6 once S3 enters the context.
    FunctionModel model(vocab.size(), [&, s3](const std::vector<TokenId>& ctx) {
        const bool escalated = std::find(ctx.begin(), ctx.end(), s3) != ctx.end();
        const double hazard = escalated ? 0.6 : 0.2;
        std::vector<float> logits(vocab.size(), -80.0f);
        logits[*vocab.id_of("MEDS_DEATH")] = static_cast<float>(std::log(hazard));
        logits[*vocab.id_of("HOSPITAL_DISCHARGE")] = static_cast<float>(std::log(1.0 - hazard));
        return logits;
    });

    TokenizedTimeline tl;
    tl.subject_id = "t";
    const TimePoint t0 = *parse_timestamp("2150-01-01 08:00:00");
    tl.tokens = {*vocab.id_of("HOSPITAL_ADMISSION"), *vocab.id_of("LAB//X"), *vocab.id_of("LAB//X"),
                 s3, *vocab.id_of("LAB//X")};
    for (int i = 0; i < 5; ++i) tl.token_time.push_back(t0 + i * 3600);

    std::vector<TaskSpec> hm;
    for (const auto& t : hm_ia_ps_tasks())
        if (t.name == "hospital_mortality") hm.push_back(t);
    AresOptions opts;
    opts.n = 400;
    const auto traj = risk_trajectory(model, tl, hm, 1, 77, vocab, opts);

    const auto ranked = attribute_deltas(traj, tl, vocab, "hospital_mortality", 3);
    REQUIRE(!ranked.empty());
    CHECK(ranked[0].position == 3);  // the S3 step
    CHECK(ranked[0].delta > 0.2);
    CHECK(ranked[0].tokens.find("S3") != std::string::npos);

    // k larger than the delta count returns everything.
    const auto all = attribute_deltas(traj, tl, vocab, "hospital_mortality", 100);
    CHECK(all.size() == traj.points.size() - 1);
}

TEST_CASE("attribution on a flat trajectory is still deterministic") {
    const Vocabulary vocab = ares_vocab();
    std::vector<double> probs(vocab.size(), 0.0);
    probs[*vocab.id_of("MEDS_DEATH")] = 0.5;
    probs[*vocab.id_of("HOSPITAL_DISCHARGE")] = 0.5;
    const auto model = fixed_distribution_model(probs);
    TokenizedTimeline tl;
    tl.subject_id = "t";
    const TimePoint t0 = *parse_timestamp("2150-01-01 08:00:00");
    for (int i = 0; i < 5; ++i) {
        tl.tokens.push_back(i == 0 ? *vocab.id_of("HOSPITAL_ADMISSION") : *vocab.id_of("LAB//X"));
        tl.token_time.push_back(t0 + i * 600);
    }
    std::vector<TaskSpec> hm;
    for (const auto& t : hm_ia_ps_tasks())
        if (t.name == "hospital_mortality") hm.push_back(t);
    AresOptions opts;
    opts.n = 100;
    const auto traj = risk_trajectory(model, tl, hm, 1, 7, vocab, opts);
    const auto a = attribute_deltas(traj, tl, vocab, "hospital_mortality", 10);
    const auto b = attribute_deltas(traj, tl, vocab, "hospital_mortality", 10);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].position == b[i].position);

    RiskTrajectory stub;
    stub.points.resize(1);
    CHECK_THROWS(attribute_deltas(stub, tl, vocab, "hospital_mortality", 2));
}
