// Command line front end for the event-stream risk pipeline: synthesize a
// cohort, tokenize it, train the generative model, and run Monte Carlo risk
// estimation and evaluation. Every subcommand is deterministic given its
// seed, and artifacts embed the invocation that produced them.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ethos/ares.hpp"
#include "ethos/checkpoint.hpp"
#include "ethos/eval.hpp"
#include "ethos/event_store.hpp"
#include "ethos/gradcheck.hpp"
#include "ethos/model.hpp"
#include "ethos/parallel.hpp"
#include "ethos/sampling.hpp"
#include "ethos/simulator.hpp"
#include "ethos/stats.hpp"
#include "ethos/synth.hpp"
#include "ethos/tokenizer.hpp"
#include "ethos/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ethos;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

// Captures the effective invocation so artifacts are self-describing.
json invocation_json(const CLI::App* cmd) {
    json j;
    j["subcommand"] = cmd->get_name();
    json opts = json::object();
    for (const CLI::Option* opt : cmd->get_options()) {
        if (opt->get_lnames().empty()) continue;
        const std::string name = opt->get_lnames().front();
        // The thread count cannot affect results, so it is an execution
        // detail rather than configuration.
        if (name == "help" || name == "threads") continue;
        if (opt->count() > 0) {
            const auto& results = opt->results();
            if (results.size() == 1) opts[name] = results.front();
            else opts[name] = results;
        } else if (!opt->get_default_str().empty()) {
            opts[name] = opt->get_default_str();
        }
    }
    j["options"] = opts;
    return j;
}

void write_text(const std::string& path, const std::string& content) {
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out.is_open()) throw std::runtime_error("cannot write '" + path + "'");
    out << content;
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

// Pre-scan for --config <file.json>; the values become option defaults, so
// explicit flags always win.
json load_config_defaults(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string_view(argv[i]) == "--config") {
            std::ifstream in(argv[i + 1], std::ios::binary);
            if (!in.is_open()) throw std::runtime_error(std::string("cannot open config '") + argv[i + 1] + "'");
            return json::parse(in);
        }
    }
    return json::object();
}

void apply_config_defaults(CLI::App& cmd, const json& config) {
    if (!config.is_object()) return;
    const json* section = &config;
    if (config.contains(cmd.get_name()) && config[cmd.get_name()].is_object())
        section = &config[cmd.get_name()];
    for (auto it = section->begin(); it != section->end(); ++it) {
        CLI::Option* opt = cmd.get_option_no_throw("--" + it.key());
        if (opt == nullptr) continue;
        const std::string value = it.value().is_string() ? it.value().get<std::string>() : it.value().dump();
        opt->default_str(value);
        opt->default_val(value);
    }
}

struct LoadedCorpus {
    Vocabulary vocab;
    std::vector<TokenizedTimeline> timelines;
};

LoadedCorpus load_vocab_and_corpus(const std::string& vocab_path, const std::string& corpus_path) {
    LoadedCorpus out;
    out.vocab = Vocabulary::load(vocab_path);
    out.timelines = load_corpus(corpus_path, out.vocab);
    return out;
}

const TokenizedTimeline& select_subject(const std::vector<TokenizedTimeline>& timelines,
                                        const std::string& subject) {
    for (const auto& tl : timelines)
        if (tl.subject_id == subject) return tl;
    throw std::runtime_error("subject '" + subject + "' not found in corpus");
}

TaskSpec select_task(const std::vector<TaskSpec>& tasks, const std::string& name) {
    for (const auto& t : tasks)
        if (t.name == name) return t;
    std::string known;
    for (const auto& t : tasks) known += (known.empty() ? "" : ", ") + t.name;
    throw std::runtime_error("unknown task '" + name + "' (known: " + known + ")");
}

std::vector<TaskSpec> load_tasks(const std::string& tasks_path, double ps_days) {
    if (tasks_path.empty()) return preset_tasks(ps_days);
    std::ifstream in(tasks_path, std::ios::binary);
    if (!in.is_open()) throw std::runtime_error("cannot open task file '" + tasks_path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return tasks_from_json(text);
}

TaskAnchor parse_anchor(const std::string& name) {
    if (name == "admission") return TaskAnchor::admission;
    if (name == "triage") return TaskAnchor::triage;
    if (name == "ed_discharge") return TaskAnchor::ed_discharge;
    if (name == "index") return TaskAnchor::index;
    throw CLI::ValidationError("--anchor", "must be admission|triage|ed_discharge|index");
}

// Static-prefix group payload, e.g. group "GENDER" -> "F".
std::string static_attribute(const TokenizedTimeline& tl, const Vocabulary& vocab, const std::string& group) {
    for (size_t i = 0; i < tl.static_prefix_len && i < tl.tokens.size(); ++i) {
        const std::string& token = vocab.token_of(tl.tokens[i]);
        if (Vocabulary::group_of(token) == group) {
            const size_t pos = token.find("//");
            return pos == std::string::npos ? token : token.substr(pos + 2);
        }
    }
    return "";
}

json risk_estimate_json(const RiskEstimate& est) {
    json j;
    j["p_hat"] = est.p_hat;
    j["ci_low"] = est.ci_low;
    j["ci_high"] = est.ci_high;
    j["n"] = est.n;
    j["m"] = est.m;
    if (est.time_mean) {
        j["time_mean_hours"] = *est.time_mean / kHour;
        j["time_median_hours"] = *est.time_median / kHour;
    }
    return j;
}

// Bernoulli next-token rig for the estimator verification mode: token 1 is
// the event, token 2 the non-event.
class BernoulliModel final : public TokenModel {
public:
    explicit BernoulliModel(double p) : p_(p) {}
    size_t vocab_size() const override { return 3; }
    size_t context_len() const override { return 16; }
    std::unique_ptr<TokenModelSession> make_session() const override {
        class Session final : public TokenModelSession {
        public:
            explicit Session(double p)
                : logits_{-80.0f, static_cast<float>(std::log(p)), static_cast<float>(std::log1p(-p))} {}
            const std::vector<float>& prime(std::span<const TokenId>) override { return logits_; }
            const std::vector<float>& step(TokenId) override { return logits_; }

        private:
            std::vector<float> logits_;
        };
        return std::make_unique<Session>(p_);
    }

private:
    double p_;
};

// ----------------------------------------------------------------------
// subcommands

int cmd_synth(const CLI::App* cmd, const std::string& spec_path, size_t n, std::uint64_t seed,
              const std::string& out_dir, unsigned threads) {
    const GeneratorSpec spec = spec_path.empty() ? default_generator_spec() : GeneratorSpec::load(spec_path);
    const OracleCohort cohort = generate_cohort(spec, n, seed, threads);
    fs::create_directories(out_dir);
    serialize_events(cohort.stream, out_dir + "/events.csv", EventFormat::csv);
    write_text(out_dir + "/oracle.csv", oracle_sidecar_csv(cohort));
    spec.save(out_dir + "/generator_spec.json");

    json manifest;
    manifest["invocation"] = invocation_json(cmd);
    manifest["seed"] = seed;
    manifest["subjects"] = n;
    size_t deaths = 0;
    for (const auto& row : cohort.rows) deaths += static_cast<size_t>(row.outcome == "dead");
    manifest["observed_death_prevalence"] = static_cast<double>(deaths) / static_cast<double>(n);
    write_json(out_dir + "/synth_run.json", manifest);
    std::cout << "wrote " << n << " subjects to " << out_dir << "\n";
    return kExitOk;
}

int cmd_tokenize(const CLI::App* cmd, const std::string& events_path, const std::string& format,
                 double ratio, std::uint64_t seed, const std::string& out_dir, bool debug_jsonl) {
    const EventFormat fmt = format == "jsonl" ? EventFormat::jsonl : EventFormat::csv;
    const ParseResult parsed = parse_events(events_path, fmt);
    for (const auto& err : parsed.errors)
        std::cerr << "record error at line " << err.line << ": " << err.message << "\n";
    if (parsed.stream.empty()) throw std::runtime_error("no usable events in '" + events_path + "'");
    fs::create_directories(out_dir);
    write_text(out_dir + "/validation.json", validate_events(parsed.stream).to_json() + "\n");

    const CohortSplit split = split_cohort(parsed.stream, ratio, seed);
    const EventStream train = filter_subjects(parsed.stream, split.train_subjects);
    const EventStream test = filter_subjects(parsed.stream, split.test_subjects);

    const QuantileBinsMap bins = fit_all_quantiles(train);
    const Vocabulary vocab = build_vocabulary(train, bins);

    std::vector<std::string> skipped_train, skipped_test;
    const auto train_tl = tokenize_cohort(train, vocab, bins, {}, &skipped_train);
    const auto test_tl = tokenize_cohort(test, vocab, bins, {}, &skipped_test);

    fs::create_directories(out_dir);
    vocab.save(out_dir + "/vocab.json");
    save_bins(bins, out_dir + "/bins.json");
    save_corpus(train_tl, vocab, out_dir + "/train.pht");
    save_corpus(test_tl, vocab, out_dir + "/test.pht");
    if (debug_jsonl) {
        save_corpus_jsonl(train_tl, vocab, out_dir + "/train.jsonl");
        save_corpus_jsonl(test_tl, vocab, out_dir + "/test.jsonl");
    }

    json manifest;
    manifest["invocation"] = invocation_json(cmd);
    manifest["seed"] = seed;
    manifest["split"] = {{"ratio", ratio},
                         {"train_subjects", split.train_subjects.size()},
                         {"test_subjects", split.test_subjects.size()}};
    manifest["skipped_subjects"] = {{"train", skipped_train}, {"test", skipped_test}};
    manifest["record_errors"] = parsed.errors.size();
    char fp[32];
    std::snprintf(fp, sizeof(fp), "%016llx", static_cast<unsigned long long>(vocab.fingerprint()));
    manifest["vocab_fingerprint"] = fp;
    write_json(out_dir + "/tokenize_run.json", manifest);
    std::cout << "tokenized " << train_tl.size() << " train / " << test_tl.size() << " test timelines, vocab "
              << vocab.size() << "\n";
    return kExitOk;
}

int cmd_stats(const CLI::App* cmd, const std::string& corpus_path, const std::string& vocab_path,
              const std::string& out_path) {
    const auto loaded = load_vocab_and_corpus(vocab_path, corpus_path);
    const StatsReport stats = corpus_stats(loaded.timelines, loaded.vocab);
    json j = json::parse(stats.to_json());
    j["invocation"] = invocation_json(cmd);
    write_json(out_path, j);
    std::cout << stats.to_json() << "\n";
    return kExitOk;
}

int cmd_train(const CLI::App* cmd, const std::string& corpus_path, const std::string& vocab_path,
              const std::string& out_path, const std::string& loss_log, TrainOptions opts, ModelConfig cfg) {
    const auto loaded = load_vocab_and_corpus(vocab_path, corpus_path);
    cfg.vocab_size = static_cast<int>(loaded.vocab.size());
    const auto corpus = concatenate_for_training(loaded.timelines, loaded.vocab);

    ModelCheckpoint ckpt = train(cfg, corpus, opts, loaded.vocab.fingerprint());
    save_checkpoint(ckpt, out_path);
    if (!loss_log.empty()) {
        std::ostringstream csv;
        csv << "# invocation: " << invocation_json(cmd).dump() << "\n";
        csv << loss_history_csv(ckpt.loss_history);
        write_text(loss_log, csv.str());
    }
    const double final_loss = ckpt.loss_history.empty() ? std::nan("") : ckpt.loss_history.back().train_loss;
    std::cout << "trained " << opts.steps << " steps, final train loss " << final_loss << ", saved "
              << out_path << "\n";
    return kExitOk;
}

int cmd_gradcheck(const CLI::App* cmd, size_t n_configs, std::uint64_t seed, const std::string& out_path) {
    const GradCheckReport report = run_gradcheck(n_configs, seed);
    json j;
    j["invocation"] = invocation_json(cmd);
    j["seed"] = seed;
    j["tolerance"] = report.tolerance;
    j["max_rel_error"] = report.max_rel_error;
    j["pass"] = report.pass;
    json configs = json::array();
    for (const auto& c : report.configs)
        configs.push_back({{"config", c.description}, {"max_rel_error", c.max_rel_error}});
    j["configs"] = configs;
    if (!out_path.empty()) write_json(out_path, j);
    std::cout << "gradcheck max relative error " << report.max_rel_error << " (tolerance "
              << report.tolerance << "): " << (report.pass ? "PASS" : "FAIL") << "\n";
    return report.pass ? kExitOk : kExitData;
}

struct SimulateArgs {
    std::string checkpoint, corpus, vocab, subject, task_name, tasks_path, anchor, out_path, scores_csv,
        dump_path, group_by;
    long long position = -1;
    size_t n_sim = 100;
    double top_p = 1.0;
    double ps_days = 10.0;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    size_t max_tokens = 4096;
};

int cmd_simulate(const CLI::App* cmd, const SimulateArgs& args) {
    const auto loaded = load_vocab_and_corpus(args.vocab, args.corpus);
    const ModelCheckpoint ckpt = load_checkpoint(args.checkpoint, loaded.vocab.fingerprint());
    const TransformerTokenModel model(ckpt.model);

    const auto tasks = load_tasks(args.tasks_path, args.ps_days);
    const TaskSpec task = select_task(tasks, args.task_name);
    const TaskAnchor anchor = args.anchor.empty() ? task.anchor : parse_anchor(args.anchor);

    std::vector<const TokenizedTimeline*> selected;
    if (args.subject.empty()) {
        for (const auto& tl : loaded.timelines) selected.push_back(&tl);
    } else {
        selected.push_back(&select_subject(loaded.timelines, args.subject));
    }

    std::ofstream dump;
    if (!args.dump_path.empty()) {
        dump.open(args.dump_path, std::ios::binary);
        if (!dump.is_open()) throw std::runtime_error("cannot write '" + args.dump_path + "'");
    }

    json rows = json::array();
    std::ostringstream scores;
    scores << "subject_id,score,label" << (args.group_by.empty() ? "" : ",group") << "\n";
    size_t evaluated = 0, skipped = 0;

    for (const TokenizedTimeline* tl : selected) {
        std::optional<size_t> position;
        if (anchor == TaskAnchor::index) {
            if (args.position < 0) throw std::runtime_error("--position required with anchor 'index'");
            position = static_cast<size_t>(args.position);
        } else {
            position = find_anchor(*tl, anchor, loaded.vocab);
        }
        if (!position || *position >= tl->tokens.size()) {
            ++skipped;
            continue;
        }

        AresState state;  // no lifecycle filtering in single-task simulation
        AresOptions opts;
        opts.n = args.n_sim;
        opts.top_p = args.top_p;
        opts.max_tokens = args.max_tokens;
        opts.threads = args.threads;
        const std::uint64_t subject_seed = derive_seed(args.seed, evaluated);
        const AresEvaluation eval =
            evaluate_risks(model, *tl, *position, {task}, state, subject_seed, loaded.vocab, opts);
        const TaskRisk& result = eval.results.front();

        json row;
        row["context_id"] = tl->subject_id;
        row["task"] = task.name;
        row["position"] = *position;
        row["N"] = result.estimate.n;
        row["M"] = result.estimate.m;
        row["discarded"] = eval.discarded;
        row["estimate"] = risk_estimate_json(result.estimate);
        row["level"] = result.level;
        row["seed"] = subject_seed;
        const TaskScore label = observed_outcome(*tl, *position, task, tasks, loaded.vocab);
        row["label"] = label.outcome == TaskOutcome::positive ? 1 : 0;
        rows.push_back(row);

        scores << tl->subject_id << ',' << format_double(result.estimate.p_hat) << ','
               << (label.outcome == TaskOutcome::positive ? 1 : 0);
        if (!args.group_by.empty()) scores << ',' << static_attribute(*tl, loaded.vocab, args.group_by);
        scores << "\n";

        if (dump.is_open()) {
            // Per-trajectory dump regenerates with the same derived seeds.
            const auto leaves = std::vector<TaskSpec>{task};
            StopSpec stop;
            stop.max_tokens = opts.max_tokens;
            for (const auto& t : task.negative_tokens)
                if (auto id = loaded.vocab.id_of(t)) stop.negative_tokens.insert(*id);
            for (const auto& t : task.positive_tokens)
                if (auto id = loaded.vocab.id_of(t)) stop.positive_tokens.insert(*id);
            if (task.horizon) stop.horizon = *task.horizon;
            const auto durations = interval_duration_table(loaded.vocab);
            const std::span<const TokenId> context(tl->tokens.data(), *position + 1);
            for (size_t i = 0; i < opts.n; ++i) {
                Rng rng(subject_seed ^ static_cast<std::uint64_t>(i));
                const Trajectory traj = generate_fpht(model, context, stop, opts.top_p, rng, durations);
                json tj;
                tj["subject_id"] = tl->subject_id;
                tj["repetition"] = i;
                tj["status"] = to_string(traj.status);
                json toks = json::array();
                for (size_t k = 0; k < traj.tokens.size(); ++k)
                    toks.push_back({{"token", loaded.vocab.token_of(traj.tokens[k])},
                                    {"elapsed_hours", traj.elapsed[k] / kHour}});
                tj["tokens"] = toks;
                dump << tj.dump() << "\n";
            }
        }
        ++evaluated;
    }
    if (evaluated == 0) throw std::runtime_error("no subject had the requested anchor");

    json report;
    report["invocation"] = invocation_json(cmd);
    report["seed"] = args.seed;
    report["task"] = task.name;
    report["evaluated"] = evaluated;
    report["skipped_no_anchor"] = skipped;
    char fp[32];
    std::snprintf(fp, sizeof(fp), "%016llx", static_cast<unsigned long long>(loaded.vocab.fingerprint()));
    report["vocab_fingerprint"] = fp;
    report["subjects"] = rows;
    write_json(args.out_path, report);
    if (!args.scores_csv.empty()) write_text(args.scores_csv, scores.str());
    std::cout << "simulated " << evaluated << " subjects for task " << task.name << "\n";
    return kExitOk;
}

struct AresArgs {
    std::string checkpoint, corpus, vocab, subject, tasks_path, out_path;
    long long position = -1;
    std::string anchor = "admission";
    size_t stride = 0;  // 0: single-position evaluation
    size_t n_sim = 100;
    double top_p = 1.0;
    double ps_days = 10.0;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    size_t max_tokens = 4096;
};

int cmd_ares(const CLI::App* cmd, const AresArgs& args, bool trajectory_mode) {
    const auto loaded = load_vocab_and_corpus(args.vocab, args.corpus);
    const ModelCheckpoint ckpt = load_checkpoint(args.checkpoint, loaded.vocab.fingerprint());
    const TransformerTokenModel model(ckpt.model);
    const auto tasks = load_tasks(args.tasks_path, args.ps_days);
    const TokenizedTimeline& tl = select_subject(loaded.timelines, args.subject);

    AresOptions opts;
    opts.n = args.n_sim;
    opts.top_p = args.top_p;
    opts.max_tokens = args.max_tokens;
    opts.threads = args.threads;

    if (trajectory_mode || args.stride > 0) {
        const size_t stride = args.stride == 0 ? 1 : args.stride;
        const RiskTrajectory traj =
            risk_trajectory(model, tl, tasks, stride, args.seed, loaded.vocab, opts, args.ps_days);
        std::ostringstream csv;
        csv << "# invocation: " << invocation_json(cmd).dump() << "\n";
        csv << risk_trajectory_csv(traj, tasks);
        write_text(args.out_path, csv.str());
        std::cout << "trajectory with " << traj.points.size() << " evaluation points written to "
                  << args.out_path << "\n";
        return kExitOk;
    }

    std::optional<size_t> position;
    if (args.position >= 0) position = static_cast<size_t>(args.position);
    else position = find_anchor(tl, parse_anchor(args.anchor), loaded.vocab);
    if (!position) throw std::runtime_error("subject has no anchor token; pass --position");

    const AresState state = update_lifecycle(tasks, tl, *position, loaded.vocab, args.ps_days);
    std::vector<TaskSpec> active;
    json inactive = json::array();
    for (const auto& t : tasks) {
        if (state.is_active(t.name)) active.push_back(t);
        else inactive.push_back(t.name);
    }
    if (active.empty()) throw std::runtime_error("no active tasks at this position (episode over?)");
    const AresEvaluation eval =
        evaluate_risks(model, tl, *position, active, state, args.seed, loaded.vocab, opts);

    json report;
    report["invocation"] = invocation_json(cmd);
    report["seed"] = args.seed;
    report["subject_id"] = tl.subject_id;
    report["position"] = *position;
    report["wall_time"] = format_timestamp(tl.token_time[*position]);
    report["n_total"] = eval.n_total;
    report["discarded"] = eval.discarded;
    json results = json::object();
    for (const auto& r : eval.results) {
        json rj = risk_estimate_json(r.estimate);
        rj["level"] = r.level;
        results[r.task] = rj;
    }
    report["risks"] = results;
    report["inactive_tasks"] = inactive;
    json reclass = json::object();
    for (const auto& [from, to] : state.replacements) reclass[from] = to;
    report["reclassified"] = reclass;
    write_json(args.out_path, report);
    std::cout << "evaluated " << eval.results.size() << " tasks at position " << *position << "\n";
    return kExitOk;
}

struct TrajectoryArgs {
    AresArgs base;
    std::string attribute_task;
    size_t top_k = 5;
    std::string attribution_out;
};

int cmd_trajectory(const CLI::App* cmd, const TrajectoryArgs& args) {
    const auto loaded = load_vocab_and_corpus(args.base.vocab, args.base.corpus);
    const ModelCheckpoint ckpt = load_checkpoint(args.base.checkpoint, loaded.vocab.fingerprint());
    const TransformerTokenModel model(ckpt.model);
    const auto tasks = load_tasks(args.base.tasks_path, args.base.ps_days);
    const TokenizedTimeline& tl = select_subject(loaded.timelines, args.base.subject);

    AresOptions opts;
    opts.n = args.base.n_sim;
    opts.top_p = args.base.top_p;
    opts.max_tokens = args.base.max_tokens;
    opts.threads = args.base.threads;
    const size_t stride = args.base.stride == 0 ? 1 : args.base.stride;

    const RiskTrajectory traj =
        risk_trajectory(model, tl, tasks, stride, args.base.seed, loaded.vocab, opts, args.base.ps_days);
    std::ostringstream csv;
    csv << "# invocation: " << invocation_json(cmd).dump() << "\n";
    csv << risk_trajectory_csv(traj, tasks);
    write_text(args.base.out_path, csv.str());
    std::cout << "trajectory with " << traj.points.size() << " evaluation points written to "
              << args.base.out_path << "\n";

    if (!args.attribute_task.empty()) {
        const auto ranked = attribute_deltas(traj, tl, loaded.vocab, args.attribute_task, args.top_k);
        json j;
        j["invocation"] = invocation_json(cmd);
        j["task"] = args.attribute_task;
        json entries = json::array();
        for (const auto& e : ranked)
            entries.push_back({{"position", e.position}, {"delta", e.delta}, {"tokens", e.tokens}});
        j["top_deltas"] = entries;
        const std::string out = args.attribution_out.empty() ? args.base.out_path + ".attribution.json"
                                                             : args.attribution_out;
        write_json(out, j);
        std::cout << "attribution written to " << out << "\n";
    }
    return kExitOk;
}

int cmd_eval(const CLI::App* cmd, const std::string& scores_path, const std::string& out_path, size_t bins,
             size_t bootstrap, std::uint64_t seed, unsigned threads, const std::string& roc_csv,
             const std::string& calibration_csv) {
    std::ifstream in(scores_path, std::ios::binary);
    if (!in.is_open()) throw std::runtime_error("cannot open scores '" + scores_path + "'");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty scores file");
    // Header: [subject_id,]score,label[,group]
    std::vector<std::string> cols;
    {
        std::istringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
    }
    int score_col = -1, label_col = -1, group_col = -1;
    for (size_t i = 0; i < cols.size(); ++i) {
        if (cols[i] == "score") score_col = static_cast<int>(i);
        if (cols[i] == "label") label_col = static_cast<int>(i);
        if (cols[i] == "group") group_col = static_cast<int>(i);
    }
    if (score_col < 0 || label_col < 0)
        throw std::runtime_error("scores file must have 'score' and 'label' columns");

    ScoredSet set;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (fields.size() < cols.size() && group_col >= 0 &&
            fields.size() == cols.size() - 1)  // trailing empty group
            fields.push_back("");
        if (fields.size() != cols.size())
            throw std::runtime_error("bad scores row at line " + std::to_string(line_no));
        ScoredPair pair;
        pair.score = std::stod(fields[static_cast<size_t>(score_col)]);
        pair.label = std::stoi(fields[static_cast<size_t>(label_col)]);
        if (group_col >= 0) pair.group = fields[static_cast<size_t>(group_col)];
        set.pairs.push_back(std::move(pair));
    }
    if (set.pairs.empty()) throw std::runtime_error("no scored pairs in '" + scores_path + "'");

    EvalOptions opts;
    opts.n_bins = bins;
    opts.bootstrap_B = bootstrap;
    opts.seed = seed;
    opts.threads = threads;
    const EvalReport report = stratified_eval(set, opts);

    json j = json::parse(report.to_json());
    j["invocation"] = invocation_json(cmd);
    j["seed"] = seed;
    write_json(out_path, j);
    if (!roc_csv.empty() && !report.degenerate) write_text(roc_csv, roc_curve_csv(set));
    if (!calibration_csv.empty()) write_text(calibration_csv, calibration_curve_csv(report.calib));
    if (report.auroc) std::cout << "AUROC " << report.auroc->value << " [" << report.auroc->ci_low << ", "
                                << report.auroc->ci_high << "]\n";
    else std::cout << "degenerate labels: " << report.degenerate_reason << "\n";
    return kExitOk;
}

int cmd_mc_verify(const CLI::App* cmd, const std::string& mode, double p, size_t n, size_t reps,
                  std::uint64_t seed, const std::string& out_path, unsigned threads) {
    const Vocabulary vocab({"CTX", "EVENT", "NO_EVENT"});
    json j;
    j["invocation"] = invocation_json(cmd);
    j["mode"] = mode;
    j["seed"] = seed;
    bool pass = false;

    const std::vector<TokenId> context{*vocab.id_of("CTX")};
    auto stop_for = [&](const Vocabulary& v) {
        StopSpec stop;
        stop.positive_tokens = {*v.id_of("EVENT")};
        stop.negative_tokens = {*v.id_of("NO_EVENT")};
        return stop;
    };

    if (mode == "unbiased") {
        const BernoulliModel model(p);
        const StopSpec stop = stop_for(vocab);
        std::vector<double> estimates(reps);
        parallel_for(reps, threads, [&](size_t r) {
            const auto counts = run_monte_carlo(model, context, stop, n, 1.0, derive_seed(seed, r), vocab, 1);
            estimates[r] = static_cast<double>(counts.m_positive) / static_cast<double>(counts.n_valid);
        });
        double mean = 0.0;
        for (double e : estimates) mean += e;
        mean /= static_cast<double>(reps);
        const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(n * reps));
        pass = std::abs(mean - p) < 4.0 * sigma;
        j["p"] = p;
        j["n"] = n;
        j["reps"] = reps;
        j["mean_p_hat"] = mean;
        j["tolerance_band"] = 4.0 * sigma;
        j["abs_error"] = std::abs(mean - p);
        std::cout << "mean p_hat " << mean << " vs true " << p << " (band " << 4.0 * sigma << "): "
                  << (pass ? "PASS" : "FAIL") << "\n";
    } else if (mode == "lln") {
        const BernoulliModel model(p);
        const StopSpec stop = stop_for(vocab);
        const std::vector<size_t> ns{100, 1000, 10000};
        json points = json::array();
        std::vector<double> log_n, log_med;
        for (size_t ni = 0; ni < ns.size(); ++ni) {
            std::vector<double> errors(reps);
            parallel_for(reps, threads, [&](size_t r) {
                const auto counts = run_monte_carlo(model, context, stop, ns[ni], 1.0,
                                                    derive_seed(seed + ni, r), vocab, 1);
                errors[r] =
                    std::abs(static_cast<double>(counts.m_positive) / static_cast<double>(counts.n_valid) - p);
            });
            std::sort(errors.begin(), errors.end());
            const double median = errors[errors.size() / 2];
            points.push_back({{"n", ns[ni]}, {"median_abs_error", median}});
            log_n.push_back(std::log(static_cast<double>(ns[ni])));
            log_med.push_back(std::log(std::max(median, 1e-12)));
        }
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (size_t i = 0; i < log_n.size(); ++i) {
            sx += log_n[i];
            sy += log_med[i];
            sxx += log_n[i] * log_n[i];
            sxy += log_n[i] * log_med[i];
        }
        const double k = static_cast<double>(log_n.size());
        const double slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
        pass = slope > -0.65 && slope < -0.35;
        j["p"] = p;
        j["reps"] = reps;
        j["points"] = points;
        j["slope"] = slope;
        std::cout << "log-log slope " << slope << " (target -0.5 +/- 0.15): " << (pass ? "PASS" : "FAIL")
                  << "\n";
    } else if (mode == "coverage") {
        json grid = json::array();
        pass = true;
        for (int pi = 1; pi <= 19; ++pi) {
            const double true_p = 0.05 * pi;
            std::vector<char> covered(reps, 0);
            parallel_for(reps, threads, [&](size_t r) {
                Rng rng(derive_seed(seed + static_cast<std::uint64_t>(pi) * 1000003, r));
                size_t m = 0;
                for (size_t i = 0; i < n; ++i) m += static_cast<size_t>(rng.uniform01() < true_p);
                const auto [lo, hi] = clopper_pearson(m, n);
                covered[r] = lo <= true_p && true_p <= hi ? 1 : 0;
            });
            size_t hits = 0;
            for (char c : covered) hits += static_cast<size_t>(c);
            const double coverage = static_cast<double>(hits) / static_cast<double>(reps);
            grid.push_back({{"p", true_p}, {"coverage", coverage}});
            if (coverage < 0.94) pass = false;
        }
        j["n"] = n;
        j["trials"] = reps;
        j["grid"] = grid;
        std::cout << "Clopper-Pearson coverage over the grid: " << (pass ? "PASS" : "FAIL") << "\n";
    } else {
        throw CLI::ValidationError("--mode", "must be unbiased|lln|coverage");
    }
    j["pass"] = pass;
    if (!out_path.empty()) write_json(out_path, j);
    return pass ? kExitOk : kExitData;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Patient-timeline generative risk pipeline"};
    app.require_subcommand(1);

    json config;
    try {
        config = load_config_defaults(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    // --config is consumed by every subcommand for artifact provenance.
    std::string config_path;
    app.add_option("--config", config_path, "JSON config with per-subcommand option defaults");

    // synth ------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort with analytic outcome probabilities");
    std::string synth_spec, synth_out = "synth_out";
    size_t synth_n = 2000;
    std::uint64_t synth_seed = 0;
    unsigned synth_threads = 1;
    synth->add_option("--spec", synth_spec, "generator spec JSON (defaults to the built-in cohort)");
    synth->add_option("--n", synth_n, "number of subjects")->capture_default_str();
    synth->add_option("--seed", synth_seed, "random seed")->capture_default_str();
    synth->add_option("--threads", synth_threads, "worker threads")->capture_default_str();
    synth->add_option("--out", synth_out, "output directory")->capture_default_str();

    // tokenize ----------------------------------------------------------
    auto* tokenize = app.add_subcommand("tokenize", "Fit bins and vocabulary on the train split and emit timelines");
    std::string tok_events, tok_format = "csv", tok_out = "tokenized";
    double tok_ratio = 0.9;
    std::uint64_t tok_seed = 0;
    bool tok_debug = false;
    tokenize->add_option("--events", tok_events, "event file")->required();
    tokenize->add_option("--format", tok_format, "csv or jsonl")->capture_default_str();
    tokenize->add_option("--ratio", tok_ratio, "train fraction of subjects")->capture_default_str();
    tokenize->add_option("--seed", tok_seed, "split seed")->capture_default_str();
    tokenize->add_option("--out", tok_out, "output directory")->capture_default_str();
    tokenize->add_flag("--debug-jsonl", tok_debug, "also write human-readable timelines");

    // stats --------------------------------------------------------------
    auto* stats = app.add_subcommand("stats", "Corpus token and timeline statistics");
    std::string stats_corpus, stats_vocab, stats_out = "stats.json";
    stats->add_option("--corpus", stats_corpus, "tokenized corpus (.pht)")->required();
    stats->add_option("--vocab", stats_vocab, "vocabulary JSON")->required();
    stats->add_option("--out", stats_out, "report path")->capture_default_str();

    // train ----------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "Train the autoregressive model on a tokenized corpus");
    std::string train_corpus, train_vocab, train_out = "checkpoint.eths", train_loss_log;
    TrainOptions train_opts;
    train_opts.steps = 1000;
    ModelConfig train_cfg = desk_config(1);
    train_cmd->add_option("--corpus", train_corpus, "tokenized corpus (.pht)")->required();
    train_cmd->add_option("--vocab", train_vocab, "vocabulary JSON")->required();
    train_cmd->add_option("--out", train_out, "checkpoint path")->capture_default_str();
    train_cmd->add_option("--loss-log", train_loss_log, "loss history CSV");
    train_cmd->add_option("--steps", train_opts.steps, "training steps")->capture_default_str();
    train_cmd->add_option("--batch-size", train_opts.batch_size, "windows per step")->capture_default_str();
    train_cmd->add_option("--seed", train_opts.seed, "training seed")->capture_default_str();
    train_cmd->add_option("--lr", train_opts.adam.lr, "learning rate")->capture_default_str();
    train_cmd->add_option("--weight-decay", train_opts.adam.weight_decay, "decoupled weight decay")
        ->capture_default_str();
    train_cmd->add_option("--val-fraction", train_opts.val_fraction, "held-out tail fraction")
        ->capture_default_str();
    train_cmd->add_option("--val-every", train_opts.val_every, "validation interval (steps)")
        ->capture_default_str();
    train_cmd->add_option("--layers", train_cfg.n_layers, "transformer layers")->capture_default_str();
    train_cmd->add_option("--heads", train_cfg.n_heads, "attention heads")->capture_default_str();
    train_cmd->add_option("--d-model", train_cfg.d_model, "embedding width")->capture_default_str();
    train_cmd->add_option("--context", train_cfg.context_len, "context window")->capture_default_str();
    train_cmd->add_option("--dropout", train_cfg.dropout, "dropout rate")->capture_default_str();
    train_cmd->add_option("--model-seed", train_cfg.seed, "parameter init seed")->capture_default_str();

    // gradcheck ---------------------------------------------------------
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the backward pass");
    size_t gc_configs = 10;
    std::uint64_t gc_seed = 0;
    std::string gc_out;
    gradcheck->add_option("--configs", gc_configs, "number of random configs")->capture_default_str();
    gradcheck->add_option("--seed", gc_seed, "seed")->capture_default_str();
    gradcheck->add_option("--out", gc_out, "report path");

    // simulate -----------------------------------------------------------
    auto* simulate = app.add_subcommand("simulate", "Monte Carlo risk for one task across subjects");
    SimulateArgs sim;
    sim.out_path = "simulate.json";
    simulate->add_option("--checkpoint", sim.checkpoint, "model checkpoint")->required();
    simulate->add_option("--corpus", sim.corpus, "tokenized corpus (.pht)")->required();
    simulate->add_option("--vocab", sim.vocab, "vocabulary JSON")->required();
    simulate->add_option("--subject", sim.subject, "single subject id (default: all)");
    simulate->add_option("--task", sim.task_name, "task name")->required();
    simulate->add_option("--tasks", sim.tasks_path, "task definitions JSON (default: presets)");
    simulate->add_option("--anchor", sim.anchor, "admission|triage|ed_discharge|index");
    simulate->add_option("--position", sim.position, "token index for anchor 'index'");
    simulate->add_option("--n-sim", sim.n_sim, "trajectories per subject")->capture_default_str();
    simulate->add_option("--top-p", sim.top_p, "nucleus mass")->capture_default_str();
    simulate->add_option("--ps-days", sim.ps_days, "prolonged-stay threshold (days)")->capture_default_str();
    simulate->add_option("--seed", sim.seed, "seed")->capture_default_str();
    simulate->add_option("--threads", sim.threads, "worker threads")->capture_default_str();
    simulate->add_option("--max-tokens", sim.max_tokens, "per-trajectory generation cap")
        ->capture_default_str();
    simulate->add_option("--out", sim.out_path, "report path")->capture_default_str();
    simulate->add_option("--scores-csv", sim.scores_csv, "write per-subject score,label CSV");
    simulate->add_option("--group-by", sim.group_by, "static attribute group for the scores CSV");
    simulate->add_option("--dump-trajectories", sim.dump_path, "JSONL dump of generated trajectories");

    // ares -----------------------------------------------------------------
    auto* ares = app.add_subcommand("ares", "Multi-task risk orchestration at a timeline position");
    AresArgs ares_args;
    ares_args.out_path = "ares.json";
    ares->add_option("--checkpoint", ares_args.checkpoint, "model checkpoint")->required();
    ares->add_option("--corpus", ares_args.corpus, "tokenized corpus (.pht)")->required();
    ares->add_option("--vocab", ares_args.vocab, "vocabulary JSON")->required();
    ares->add_option("--subject", ares_args.subject, "subject id")->required();
    ares->add_option("--position", ares_args.position, "token index (default: anchor)");
    ares->add_option("--anchor", ares_args.anchor, "admission|triage|ed_discharge")->capture_default_str();
    ares->add_option("--stride", ares_args.stride, "evaluate every k-th token (trajectory CSV mode)");
    ares->add_option("--tasks", ares_args.tasks_path, "task definitions JSON (default: presets)");
    ares->add_option("--n-sim", ares_args.n_sim, "trajectories per evaluation")->capture_default_str();
    ares->add_option("--top-p", ares_args.top_p, "nucleus mass")->capture_default_str();
    ares->add_option("--ps-days", ares_args.ps_days, "prolonged-stay threshold (days)")->capture_default_str();
    ares->add_option("--seed", ares_args.seed, "seed")->capture_default_str();
    ares->add_option("--threads", ares_args.threads, "worker threads")->capture_default_str();
    ares->add_option("--max-tokens", ares_args.max_tokens, "per-trajectory generation cap")
        ->capture_default_str();
    ares->add_option("--out", ares_args.out_path, "output path (JSON, or CSV with --stride)")
        ->capture_default_str();

    // trajectory -------------------------------------------------------------
    auto* trajectory = app.add_subcommand("trajectory", "Per-token risk trajectory with MC bands");
    TrajectoryArgs traj_args;
    traj_args.base.out_path = "trajectory.csv";
    traj_args.base.stride = 1;
    trajectory->add_option("--checkpoint", traj_args.base.checkpoint, "model checkpoint")->required();
    trajectory->add_option("--corpus", traj_args.base.corpus, "tokenized corpus (.pht)")->required();
    trajectory->add_option("--vocab", traj_args.base.vocab, "vocabulary JSON")->required();
    trajectory->add_option("--subject", traj_args.base.subject, "subject id")->required();
    trajectory->add_option("--stride", traj_args.base.stride, "evaluate every k-th token")
        ->capture_default_str();
    trajectory->add_option("--tasks", traj_args.base.tasks_path, "task definitions JSON (default: presets)");
    trajectory->add_option("--n-sim", traj_args.base.n_sim, "trajectories per evaluation")
        ->capture_default_str();
    trajectory->add_option("--top-p", traj_args.base.top_p, "nucleus mass")->capture_default_str();
    trajectory->add_option("--ps-days", traj_args.base.ps_days, "prolonged-stay threshold (days)")
        ->capture_default_str();
    trajectory->add_option("--seed", traj_args.base.seed, "seed")->capture_default_str();
    trajectory->add_option("--threads", traj_args.base.threads, "worker threads")->capture_default_str();
    trajectory->add_option("--max-tokens", traj_args.base.max_tokens, "per-trajectory generation cap")
        ->capture_default_str();
    trajectory->add_option("--out", traj_args.base.out_path, "trajectory CSV path")->capture_default_str();
    trajectory->add_option("--attribute", traj_args.attribute_task, "rank risk deltas for this task");
    trajectory->add_option("--top-k", traj_args.top_k, "attribution entries")->capture_default_str();
    trajectory->add_option("--attribution-out", traj_args.attribution_out, "attribution JSON path");

    // eval ---------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "Discrimination and calibration statistics for scored sets");
    std::string eval_scores, eval_out = "eval.json", eval_roc_csv, eval_calib_csv;
    size_t eval_bins = 10, eval_bootstrap = 1000;
    std::uint64_t eval_seed = 0;
    unsigned eval_threads = 1;
    eval_cmd->add_option("--scores", eval_scores, "scores CSV (score,label[,group])")->required();
    eval_cmd->add_option("--out", eval_out, "report path")->capture_default_str();
    eval_cmd->add_option("--bins", eval_bins, "calibration bins")->capture_default_str();
    eval_cmd->add_option("--bootstrap", eval_bootstrap, "bootstrap resamples")->capture_default_str();
    eval_cmd->add_option("--seed", eval_seed, "bootstrap seed")->capture_default_str();
    eval_cmd->add_option("--threads", eval_threads, "worker threads")->capture_default_str();
    eval_cmd->add_option("--roc-csv", eval_roc_csv, "ROC curve CSV path");
    eval_cmd->add_option("--calibration-csv", eval_calib_csv, "calibration curve CSV path");

    // mc-verify -----------------------------------------------------------
    auto* mc_verify = app.add_subcommand("mc-verify", "Statistical checks of the Monte Carlo estimator");
    std::string mc_mode = "unbiased", mc_out;
    double mc_p = 0.3;
    size_t mc_n = 100, mc_reps = 1000;
    std::uint64_t mc_seed = 0;
    unsigned mc_threads = 1;
    mc_verify->add_option("--mode", mc_mode, "unbiased|lln|coverage")->capture_default_str();
    mc_verify->add_option("--p", mc_p, "true event probability")->capture_default_str();
    mc_verify->add_option("--n", mc_n, "trajectories per repetition")->capture_default_str();
    mc_verify->add_option("--reps", mc_reps, "repetitions (or trials per grid point)")
        ->capture_default_str();
    mc_verify->add_option("--seed", mc_seed, "seed")->capture_default_str();
    mc_verify->add_option("--threads", mc_threads, "worker threads")->capture_default_str();
    mc_verify->add_option("--out", mc_out, "report path");

    for (CLI::App* cmd : app.get_subcommands({})) apply_config_defaults(*cmd, config);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth, synth_spec, synth_n, synth_seed, synth_out, synth_threads);
        if (tokenize->parsed())
            return cmd_tokenize(tokenize, tok_events, tok_format, tok_ratio, tok_seed, tok_out, tok_debug);
        if (stats->parsed()) return cmd_stats(stats, stats_corpus, stats_vocab, stats_out);
        if (train_cmd->parsed())
            return cmd_train(train_cmd, train_corpus, train_vocab, train_out, train_loss_log, train_opts,
                             train_cfg);
        if (gradcheck->parsed()) return cmd_gradcheck(gradcheck, gc_configs, gc_seed, gc_out);
        if (simulate->parsed()) return cmd_simulate(simulate, sim);
        if (ares->parsed()) return cmd_ares(ares, ares_args, false);
        if (trajectory->parsed()) return cmd_trajectory(trajectory, traj_args);
        if (eval_cmd->parsed())
            return cmd_eval(eval_cmd, eval_scores, eval_out, eval_bins, eval_bootstrap, eval_seed,
                            eval_threads, eval_roc_csv, eval_calib_csv);
        if (mc_verify->parsed())
            return cmd_mc_verify(mc_verify, mc_mode, mc_p, mc_n, mc_reps, mc_seed, mc_out, mc_threads);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
