#include "ethos/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ethos/parallel.hpp"
#include "ethos/rng.hpp"

namespace ethos {
namespace {

using nlohmann::json;

void require_scores_finite(const ScoredSet& set) {
    for (const auto& p : set.pairs) {
        if (!std::isfinite(p.score)) throw std::runtime_error("non-finite score");
        if (p.label != 0 && p.label != 1) throw std::runtime_error("labels must be 0 or 1");
    }
}

void require_both_classes(const ScoredSet& set) {
    if (set.positives() == 0 || set.negatives() == 0) throw std::runtime_error("degenerate labels: one class absent");
}

}  // namespace

size_t ScoredSet::positives() const {
    size_t n = 0;
    for (const auto& p : pairs) n += static_cast<size_t>(p.label == 1);
    return n;
}

size_t ScoredSet::negatives() const { return pairs.size() - positives(); }

double ScoredSet::prevalence() const {
    if (pairs.empty()) return 0.0;
    return static_cast<double>(positives()) / static_cast<double>(pairs.size());
}

double roc_auc(const ScoredSet& set) {
    require_scores_finite(set);
    require_both_classes(set);
    const size_t n = set.pairs.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return set.pairs[a].score < set.pairs[b].score; });

    // Midranks over tied scores; rank sum of positives gives the U statistic.
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && set.pairs[order[j]].score == set.pairs[order[i]].score) ++j;
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (size_t k = i; k < j; ++k) {
            if (set.pairs[order[k]].label == 1) rank_sum_pos += midrank;
        }
        i = j;
    }
    const double n_pos = static_cast<double>(set.positives());
    const double n_neg = static_cast<double>(set.negatives());
    const double u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    return u / (n_pos * n_neg);
}

double pr_auc(const ScoredSet& set) {
    require_scores_finite(set);
    if (set.positives() == 0) throw std::runtime_error("degenerate labels: no positives");
    const size_t n = set.pairs.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return set.pairs[a].score > set.pairs[b].score; });

    const double total_pos = static_cast<double>(set.positives());
    double tp = 0.0, fp = 0.0, ap = 0.0, prev_recall = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && set.pairs[order[j]].score == set.pairs[order[i]].score) ++j;
        for (size_t k = i; k < j; ++k) {
            if (set.pairs[order[k]].label == 1) tp += 1.0;
            else fp += 1.0;
        }
        const double recall = tp / total_pos;
        const double precision = tp + fp > 0.0 ? tp / (tp + fp) : 1.0;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

OperatingPoint operating_point(const ScoredSet& set) {
    require_scores_finite(set);
    require_both_classes(set);
    std::vector<double> thresholds;
    thresholds.reserve(set.pairs.size() + 1);
    for (const auto& p : set.pairs) thresholds.push_back(p.score);
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    // Sentinel above the maximum: the predict-nothing corner.
    thresholds.push_back(std::numeric_limits<double>::infinity());

    const double n_pos = static_cast<double>(set.positives());
    const double n_neg = static_cast<double>(set.negatives());

    OperatingPoint best;
    double best_dist = std::numeric_limits<double>::infinity();
    // Scan descending so that on exact distance ties the lower threshold
    // (higher sensitivity) wins.
    for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
        const double t = *it;
        double tp = 0.0, tn = 0.0;
        for (const auto& p : set.pairs) {
            if (p.score >= t) {
                if (p.label == 1) tp += 1.0;
            } else {
                if (p.label == 0) tn += 1.0;
            }
        }
        const double sens = tp / n_pos;
        const double spec = tn / n_neg;
        const double dist = std::sqrt((1.0 - sens) * (1.0 - sens) + (1.0 - spec) * (1.0 - spec));
        if (dist <= best_dist) {
            best_dist = dist;
            best = OperatingPoint{t, sens, spec};
        }
    }
    return best;
}

std::pair<double, double> bootstrap_ci(const ScoredSet& set, const MetricFn& metric, size_t B,
                                       std::uint64_t seed, unsigned threads) {
    if (B < 100) throw std::invalid_argument("bootstrap needs B >= 100");
    if (set.pairs.empty()) throw std::runtime_error("cannot bootstrap an empty set");
    const size_t n = set.pairs.size();

    std::vector<double> values(B);
    std::vector<char> failed(B, 0);
    parallel_for(B, threads, [&](size_t b) {
        Rng rng(derive_seed(seed, b));
        ScoredSet resample;
        resample.pairs.resize(n);
        bool ok = false;
        for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
            size_t pos = 0;
            for (size_t i = 0; i < n; ++i) {
                resample.pairs[i] = set.pairs[rng.below(n)];
                pos += static_cast<size_t>(resample.pairs[i].label == 1);
            }
            ok = pos > 0 && pos < n;
        }
        if (!ok) {
            failed[b] = 1;
            return;
        }
        values[b] = metric(resample);
    });
    for (char f : failed) {
        if (f) throw std::runtime_error("labels too imbalanced to bootstrap");
    }

    std::sort(values.begin(), values.end());
    auto pct = [&](double q) {
        const double h = (static_cast<double>(B) - 1.0) * q;
        const size_t lo = static_cast<size_t>(std::floor(h));
        const size_t hi = std::min(lo + 1, B - 1);
        const double frac = h - static_cast<double>(lo);
        return values[lo] + frac * (values[hi] - values[lo]);
    };
    return {pct(0.025), pct(0.975)};
}

std::string brier_category(double brier) {
    if (brier < 0.05) return "excellent";
    if (brier < 0.10) return "good";
    if (brier <= 0.20) return "acceptable";
    return "poor";
}

CalibrationResult calibration(const ScoredSet& set, size_t n_bins) {
    if (n_bins == 0) throw std::invalid_argument("n_bins must be positive");
    if (set.pairs.size() < n_bins) throw std::runtime_error("fewer samples than calibration bins");
    require_scores_finite(set);

    std::vector<double> sum_pred(n_bins, 0.0), sum_label(n_bins, 0.0);
    std::vector<size_t> counts(n_bins, 0);
    double brier = 0.0;
    for (const auto& p : set.pairs) {
        const auto bin = std::min(static_cast<size_t>(p.score * static_cast<double>(n_bins)), n_bins - 1);
        sum_pred[bin] += p.score;
        sum_label[bin] += p.label;
        counts[bin] += 1;
        const double d = p.score - static_cast<double>(p.label);
        brier += d * d;
    }
    brier /= static_cast<double>(set.pairs.size());

    CalibrationResult result;
    result.brier = brier;
    result.category = brier_category(brier);
    for (size_t b = 0; b < n_bins; ++b) {
        CalibrationBin bin;
        bin.count = counts[b];
        if (counts[b] > 0) {
            bin.mean_predicted = sum_pred[b] / static_cast<double>(counts[b]);
            bin.observed_frequency = sum_label[b] / static_cast<double>(counts[b]);
        }
        result.bins.push_back(bin);
    }
    return result;
}

EvalReport evaluate(const ScoredSet& set, const EvalOptions& opts) {
    EvalReport report;
    report.n = set.pairs.size();
    report.prevalence = set.prevalence();
    if (set.positives() == 0 || set.negatives() == 0) {
        report.degenerate = true;
        report.degenerate_reason = set.positives() == 0 ? "no positive labels" : "no negative labels";
        if (report.n >= opts.n_bins) report.calib = calibration(set, opts.n_bins);
        return report;
    }

    const auto op = operating_point(set);
    report.op_threshold = op.threshold;

    auto with_ci = [&](const MetricFn& fn, std::uint64_t salt) {
        MetricWithCi m;
        m.value = fn(set);
        auto [lo, hi] = bootstrap_ci(set, fn, opts.bootstrap_B, derive_seed(opts.seed, salt), opts.threads);
        m.ci_low = lo;
        m.ci_high = hi;
        return m;
    };
    report.auroc = with_ci(roc_auc, 1);
    report.auprc = with_ci(pr_auc, 2);
    report.sensitivity = with_ci([](const ScoredSet& s) { return operating_point(s).sensitivity; }, 3);
    report.specificity = with_ci([](const ScoredSet& s) { return operating_point(s).specificity; }, 4);
    if (report.n >= opts.n_bins) report.calib = calibration(set, opts.n_bins);
    return report;
}

EvalReport stratified_eval(const ScoredSet& set, const EvalOptions& opts) {
    EvalReport overall = evaluate(set, opts);
    std::map<std::string, ScoredSet> by_group;
    for (const auto& p : set.pairs) {
        if (!p.group.empty()) by_group[p.group].pairs.push_back(p);
    }
    std::uint64_t salt = 100;
    for (auto& [name, subset] : by_group) {
        EvalOptions sub_opts = opts;
        sub_opts.seed = derive_seed(opts.seed, salt++);
        overall.groups[name] = evaluate(subset, sub_opts);
    }
    return overall;
}

namespace {

json metric_json(const std::optional<MetricWithCi>& m) {
    if (!m) return nullptr;
    return json{{"value", m->value}, {"ci_low", m->ci_low}, {"ci_high", m->ci_high}};
}

json report_json(const EvalReport& r) {
    json j;
    j["n"] = r.n;
    j["prevalence"] = r.prevalence;
    if (r.degenerate) {
        j["degenerate"] = true;
        j["reason"] = r.degenerate_reason;
    }
    j["auroc"] = metric_json(r.auroc);
    j["auprc"] = metric_json(r.auprc);
    j["sensitivity"] = metric_json(r.sensitivity);
    j["specificity"] = metric_json(r.specificity);
    j["operating_threshold"] = r.op_threshold;
    json bins = json::array();
    for (const auto& b : r.calib.bins)
        bins.push_back({{"mean_predicted", b.mean_predicted},
                        {"observed_frequency", b.observed_frequency},
                        {"count", b.count}});
    j["calibration"] = {{"bins", bins}, {"brier", r.calib.brier}, {"category", r.calib.category}};
    if (!r.groups.empty()) {
        json g = json::object();
        for (const auto& [name, sub] : r.groups) g[name] = report_json(sub);
        j["groups"] = g;
    }
    return j;
}

}  // namespace

std::string EvalReport::to_json() const { return report_json(*this).dump(2); }

std::string roc_curve_csv(const ScoredSet& set) {
    require_both_classes(set);
    std::vector<double> thresholds;
    for (const auto& p : set.pairs) thresholds.push_back(p.score);
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    const double n_pos = static_cast<double>(set.positives());
    const double n_neg = static_cast<double>(set.negatives());
    std::ostringstream out;
    out << "fpr,tpr,threshold\n";
    out << "0,0,inf\n";
    for (double t : thresholds) {
        double tp = 0.0, fp = 0.0;
        for (const auto& p : set.pairs) {
            if (p.score >= t) {
                if (p.label == 1) tp += 1.0;
                else fp += 1.0;
            }
        }
        out << (fp / n_neg) << ',' << (tp / n_pos) << ',' << t << "\n";
    }
    return out.str();
}

std::string calibration_curve_csv(const CalibrationResult& calib) {
    std::ostringstream out;
    out << "bin_mean,bin_freq,count\n";
    for (const auto& b : calib.bins) out << b.mean_predicted << ',' << b.observed_frequency << ',' << b.count << "\n";
    return out.str();
}

}  // namespace ethos
