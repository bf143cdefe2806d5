#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ethos {

struct ScoredPair {
    double score = 0.0;  // predicted probability in [0,1]
    int label = 0;       // 0 or 1
    std::string group;   // optional stratification key
};

struct ScoredSet {
    std::vector<ScoredPair> pairs;

    size_t positives() const;
    size_t negatives() const;
    double prevalence() const;
};

// Probability that a random positive outranks a random negative, ties
// counted half (Mann-Whitney, computed via midranks).
double roc_auc(const ScoredSet& set);

// Average precision: step-wise interpolation of the precision-recall curve
// over descending score thresholds.
double pr_auc(const ScoredSet& set);

struct OperatingPoint {
    double threshold = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
};

// ROC operating point closest (Euclidean) to the perfect corner (0,1),
// scanning all unique-score thresholds; ties resolve to the lower threshold.
OperatingPoint operating_point(const ScoredSet& set);

using MetricFn = std::function<double(const ScoredSet&)>;

// Percentile bootstrap (2.5/97.5) over B resamples with replacement.
// Resamples missing a class are redrawn, up to 10 attempts per resample.
// Deterministic given seed; resamples have derived sub-seeds so parallel
// execution equals sequential.
std::pair<double, double> bootstrap_ci(const ScoredSet& set, const MetricFn& metric, size_t B,
                                       std::uint64_t seed, unsigned threads = 1);

struct CalibrationBin {
    double mean_predicted = 0.0;
    double observed_frequency = 0.0;
    size_t count = 0;
};

struct CalibrationResult {
    std::vector<CalibrationBin> bins;  // equal-width on predicted probability
    double brier = 0.0;
    std::string category;  // excellent / good / acceptable / poor
};

std::string brier_category(double brier);

CalibrationResult calibration(const ScoredSet& set, size_t n_bins = 10);

struct MetricWithCi {
    double value = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

struct EvalReport {
    size_t n = 0;
    double prevalence = 0.0;
    bool degenerate = false;        // one class only: discrimination absent
    std::string degenerate_reason;
    std::optional<MetricWithCi> auroc;
    std::optional<MetricWithCi> auprc;
    std::optional<MetricWithCi> sensitivity;
    std::optional<MetricWithCi> specificity;
    double op_threshold = 0.0;
    CalibrationResult calib;
    std::map<std::string, EvalReport> groups;

    std::string to_json() const;
};

struct EvalOptions {
    size_t n_bins = 10;
    size_t bootstrap_B = 1000;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

EvalReport evaluate(const ScoredSet& set, const EvalOptions& opts);

// Full report per group key plus the overall report; groups with one class
// are marked degenerate rather than failing.
EvalReport stratified_eval(const ScoredSet& set, const EvalOptions& opts);

// Plot-ready curves.
std::string roc_curve_csv(const ScoredSet& set);
std::string calibration_curve_csv(const CalibrationResult& calib);

}  // namespace ethos
