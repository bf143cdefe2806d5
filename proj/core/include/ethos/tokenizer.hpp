#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ethos/event_store.hpp"
#include "ethos/intervals.hpp"
#include "ethos/quantiles.hpp"
#include "ethos/vocabulary.hpp"

namespace ethos {

// Fitted decile bins per numeric-bearing code.
using QuantileBinsMap = std::unordered_map<std::string, QuantileBins>;

QuantileBinsMap fit_all_quantiles(const EventStream& train);
void save_bins(const QuantileBinsMap& bins, const std::string& path);
QuantileBinsMap load_bins(const std::string& path);

// Hierarchical decomposition of a namespaced code into 1..7 categorical
// token strings (quantile payloads are appended separately):
//  - procedure codes split into their 7 single-character axes,
//  - drug codes split into class (3 chars) / subgroup (1 char) / suffix,
//  - diagnosis codes truncate to the first 4 payload characters,
//  - everything else stays one token (text payloads join as CODE//TEXT).
std::vector<std::string> decompose_code(const std::string& code, const std::optional<std::string>& text_value = std::nullopt);

// One patient health timeline: token ids plus per-token source timestamps.
struct TokenizedTimeline {
    std::string subject_id;
    std::vector<TokenId> tokens;
    std::vector<TimePoint> token_time;
    size_t static_prefix_len = 0;
};

struct TokenizerConfig {
    bool emit_static_prefix = true;
};

// Tokens a training corpus would emit, before any vocabulary exists.
// Used by build_vocabulary; per-event counts let callers check the 1..7 rule.
struct RawTimeline {
    std::string subject_id;
    std::vector<std::string> tokens;
    std::vector<TimePoint> token_time;
    size_t static_prefix_len = 0;
    std::vector<size_t> tokens_per_event;
};

RawTimeline emit_raw_timeline(const EventStream& stream, const std::string& subject_id,
                              const QuantileBinsMap& bins, const TokenizerConfig& cfg = {});

// Vocabulary over everything the training stream emits plus the fixed sets:
// the 19 interval tokens, Q1..Q10, TIMELINE_END and per-group UNKNOWN
// fallbacks. Ids follow sorted token order, so rebuilding from the same
// corpus reproduces the fingerprint.
Vocabulary build_vocabulary(const EventStream& train, const QuantileBinsMap& bins,
                            const TokenizerConfig& cfg = {});

// Maps one subject's events to token ids. Unseen codes fall back to their
// group's UNKNOWN token. Throws "empty timeline" when nothing is emitted.
TokenizedTimeline tokenize_timeline(const EventStream& stream, const std::string& subject_id,
                                    const Vocabulary& vocab, const QuantileBinsMap& bins,
                                    const TokenizerConfig& cfg = {});

std::vector<TokenizedTimeline> tokenize_cohort(const EventStream& stream, const Vocabulary& vocab,
                                               const QuantileBinsMap& bins, const TokenizerConfig& cfg = {},
                                               std::vector<std::string>* skipped = nullptr);

// Corpus summary: token/timeline totals, length distribution, per-group
// token counts.
struct StatsReport {
    size_t total_tokens = 0;
    size_t timeline_count = 0;
    size_t longest = 0;
    size_t shortest = 0;
    double mean = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    size_t unique_tokens = 0;
    std::map<std::string, size_t> group_counts;
    std::map<std::string, size_t> group_unique;

    std::string to_json() const;
};

StatsReport corpus_stats(const std::vector<TokenizedTimeline>& timelines, const Vocabulary& vocab);

// Tokenized corpus container format: magic "PHT1", per-timeline offset
// table, little-endian u32 token ids and u64 second timestamps.
void save_corpus(const std::vector<TokenizedTimeline>& timelines, const Vocabulary& vocab,
                 const std::string& path);
std::vector<TokenizedTimeline> load_corpus(const std::string& path, const Vocabulary& vocab);

// Human-readable debug dump, one JSON object per timeline.
void save_corpus_jsonl(const std::vector<TokenizedTimeline>& timelines, const Vocabulary& vocab,
                       const std::string& path);

// Concatenates timelines into one training stream, appending TIMELINE_END
// after each.
std::vector<TokenId> concatenate_for_training(const std::vector<TokenizedTimeline>& timelines,
                                              const Vocabulary& vocab);

}  // namespace ethos
