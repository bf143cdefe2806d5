#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ethos/time.hpp"

namespace ethos {

// One timestamped clinical fact. Codes are namespaced token strings such as
// "LAB//51221//%", "ICD_CM//I5033" or bare markers like "HOSPITAL_ADMISSION".
struct Event {
    std::string subject_id;
    TimePoint time = 0;
    std::string code;
    std::optional<double> numeric_value;
    std::optional<std::string> text_value;

    bool operator==(const Event&) const = default;
};

struct SubjectRange {
    size_t begin = 0;
    size_t end = 0;  // exclusive
};

// Events grouped by subject, each group sorted by time ascending (stable:
// same-time events keep input order). Read-only after construction.
class EventStream {
public:
    EventStream() = default;

    // Groups and stable-sorts; subjects appear in order of first appearance.
    static EventStream from_events(std::vector<Event> events);

    const std::vector<Event>& events() const { return events_; }
    const std::vector<std::string>& subjects() const { return subject_order_; }
    size_t subject_count() const { return subject_order_.size(); }

    const SubjectRange* find_subject(const std::string& id) const;

    // Events of one subject as [begin, end) indices into events().
    SubjectRange subject_range(const std::string& id) const;

    bool empty() const { return events_.empty(); }

private:
    std::vector<Event> events_;
    std::vector<std::string> subject_order_;
    std::unordered_map<std::string, SubjectRange> index_;
};

enum class EventFormat { csv, jsonl };

struct RecordError {
    size_t line = 0;  // 1-based line number in the source file
    std::string message;
};

struct ParseResult {
    EventStream stream;
    std::vector<RecordError> errors;
};

// Reads an event file. Malformed records are reported per line and skipped;
// an empty file yields an empty stream. Throws std::runtime_error only for
// file-level problems (missing file, bad header).
ParseResult parse_events(const std::string& path, EventFormat format);

void serialize_events(const EventStream& stream, const std::string& path, EventFormat format);

struct ValidationReport {
    std::map<std::string, size_t> events_per_subject;
    std::map<std::string, size_t> duplicate_time_counts;
    struct Violation {
        std::string subject_id;
        size_t event_index = 0;
        std::string message;
    };
    std::vector<Violation> violations;

    size_t violation_count() const { return violations.size(); }
    std::string to_json() const;
};

// Report-only invariant check; never throws, never mutates.
ValidationReport validate_events(const EventStream& stream);

struct CohortSplit {
    std::vector<std::string> train_subjects;
    std::vector<std::string> test_subjects;
    double ratio = 0.0;
    std::uint64_t seed = 0;
};

// Splits by subject, never by event. Deterministic given (seed, subject set):
// |train| = round(ratio * n), clamped so both sides are non-empty.
CohortSplit split_cohort(const EventStream& stream, double ratio, std::uint64_t seed);

// Restricts a stream to the given subjects (order preserved).
EventStream filter_subjects(const EventStream& stream, const std::vector<std::string>& subjects);

}  // namespace ethos
