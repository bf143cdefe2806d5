#include "ethos/event_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ethos/rng.hpp"

namespace ethos {
namespace {

using nlohmann::json;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

void strip_cr(std::string& line) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
}

std::optional<double> parse_numeric(const std::string& text, std::string& err) {
    if (text.empty()) return std::nullopt;
    size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &pos);
    } catch (const std::exception&) {
        err = "unparseable numeric_value '" + text + "'";
        return std::nullopt;
    }
    if (pos != text.size()) {
        err = "unparseable numeric_value '" + text + "'";
        return std::nullopt;
    }
    if (!std::isfinite(v)) {
        err = "non-finite numeric_value";
        return std::nullopt;
    }
    return v;
}

constexpr const char* kCsvHeader = "subject_id,time,code,numeric_value,text_value";

}  // namespace

EventStream EventStream::from_events(std::vector<Event> events) {
    EventStream s;
    // Group by subject in order of first appearance, keeping input order
    // within each subject for the stable time sort.
    std::unordered_map<std::string, std::vector<size_t>> by_subject;
    std::vector<std::string> order;
    for (size_t i = 0; i < events.size(); ++i) {
        auto [it, inserted] = by_subject.try_emplace(events[i].subject_id);
        if (inserted) order.push_back(events[i].subject_id);
        it->second.push_back(i);
    }
    s.events_.reserve(events.size());
    for (const auto& id : order) {
        auto& idxs = by_subject[id];
        std::stable_sort(idxs.begin(), idxs.end(),
                         [&](size_t a, size_t b) { return events[a].time < events[b].time; });
        const size_t begin = s.events_.size();
        for (size_t i : idxs) s.events_.push_back(std::move(events[i]));
        s.index_[id] = SubjectRange{begin, s.events_.size()};
    }
    s.subject_order_ = std::move(order);
    return s;
}

const SubjectRange* EventStream::find_subject(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &it->second;
}

SubjectRange EventStream::subject_range(const std::string& id) const {
    const SubjectRange* r = find_subject(id);
    if (!r) throw std::out_of_range("unknown subject '" + id + "'");
    return *r;
}

ParseResult parse_events(const std::string& path, EventFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) throw std::runtime_error("cannot open event file '" + path + "'");

    ParseResult result;
    std::vector<Event> events;
    std::string line;
    size_t line_no = 0;

    auto record_error = [&](size_t ln, std::string msg) {
        result.errors.push_back(RecordError{ln, std::move(msg)});
    };

    if (format == EventFormat::csv) {
        if (!std::getline(in, line)) {
            result.stream = EventStream{};
            return result;  // empty file -> empty stream
        }
        ++line_no;
        strip_cr(line);
        if (line != kCsvHeader)
            throw std::runtime_error("bad CSV header in '" + path + "': expected '" + kCsvHeader + "'");
        while (std::getline(in, line)) {
            ++line_no;
            strip_cr(line);
            if (line.empty()) continue;
            auto fields = split_csv_line(line);
            if (fields.size() != 5) {
                record_error(line_no, "expected 5 fields, got " + std::to_string(fields.size()));
                continue;
            }
            Event ev;
            ev.subject_id = fields[0];
            if (ev.subject_id.empty()) {
                record_error(line_no, "missing subject_id");
                continue;
            }
            auto t = parse_timestamp(fields[1]);
            if (!t) {
                record_error(line_no, "unparseable timestamp '" + fields[1] + "'");
                continue;
            }
            ev.time = *t;
            ev.code = fields[2];
            if (ev.code.empty()) {
                record_error(line_no, "missing code");
                continue;
            }
            std::string err;
            ev.numeric_value = parse_numeric(fields[3], err);
            if (!err.empty()) {
                record_error(line_no, err);
                continue;
            }
            if (!fields[4].empty()) ev.text_value = fields[4];
            events.push_back(std::move(ev));
        }
    } else {
        while (std::getline(in, line)) {
            ++line_no;
            strip_cr(line);
            if (line.empty()) continue;
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object()) {
                record_error(line_no, "malformed JSON object");
                continue;
            }
            Event ev;
            if (!j.contains("subject_id") || !j["subject_id"].is_string() || j["subject_id"].get<std::string>().empty()) {
                record_error(line_no, "missing subject_id");
                continue;
            }
            ev.subject_id = j["subject_id"].get<std::string>();
            if (!j.contains("time") || !j["time"].is_string()) {
                record_error(line_no, "missing time");
                continue;
            }
            auto t = parse_timestamp(j["time"].get<std::string>());
            if (!t) {
                record_error(line_no, "unparseable timestamp '" + j["time"].get<std::string>() + "'");
                continue;
            }
            ev.time = *t;
            if (!j.contains("code") || !j["code"].is_string() || j["code"].get<std::string>().empty()) {
                record_error(line_no, "missing code");
                continue;
            }
            ev.code = j["code"].get<std::string>();
            if (j.contains("numeric_value") && !j["numeric_value"].is_null()) {
                if (!j["numeric_value"].is_number()) {
                    record_error(line_no, "numeric_value not a number");
                    continue;
                }
                const double v = j["numeric_value"].get<double>();
                if (!std::isfinite(v)) {
                    record_error(line_no, "non-finite numeric_value");
                    continue;
                }
                ev.numeric_value = v;
            }
            if (j.contains("text_value") && !j["text_value"].is_null()) {
                if (!j["text_value"].is_string()) {
                    record_error(line_no, "text_value not a string");
                    continue;
                }
                ev.text_value = j["text_value"].get<std::string>();
            }
            events.push_back(std::move(ev));
        }
    }

    result.stream = EventStream::from_events(std::move(events));
    return result;
}

void serialize_events(const EventStream& stream, const std::string& path, EventFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out.is_open()) throw std::runtime_error("cannot write event file '" + path + "'");
    if (format == EventFormat::csv) {
        out << kCsvHeader << "\n";
        for (const Event& ev : stream.events()) {
            out << csv_escape(ev.subject_id) << ',' << format_timestamp(ev.time) << ',' << csv_escape(ev.code) << ',';
            if (ev.numeric_value) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.17g", *ev.numeric_value);
                out << buf;
            }
            out << ',';
            if (ev.text_value) out << csv_escape(*ev.text_value);
            out << "\n";
        }
    } else {
        for (const Event& ev : stream.events()) {
            json j;
            j["subject_id"] = ev.subject_id;
            j["time"] = format_timestamp(ev.time);
            j["code"] = ev.code;
            if (ev.numeric_value) j["numeric_value"] = *ev.numeric_value;
            if (ev.text_value) j["text_value"] = *ev.text_value;
            out << j.dump() << "\n";
        }
    }
}

ValidationReport validate_events(const EventStream& stream) {
    ValidationReport report;
    for (const auto& id : stream.subjects()) {
        const SubjectRange r = stream.subject_range(id);
        report.events_per_subject[id] = r.end - r.begin;
        size_t dups = 0;
        for (size_t i = r.begin; i < r.end; ++i) {
            const Event& ev = stream.events()[i];
            if (i > r.begin && ev.time == stream.events()[i - 1].time) ++dups;
            if (i > r.begin && ev.time < stream.events()[i - 1].time)
                report.violations.push_back({id, i, "events out of time order"});
            if (ev.code.empty()) report.violations.push_back({id, i, "empty code"});
            if (ev.numeric_value && !std::isfinite(*ev.numeric_value))
                report.violations.push_back({id, i, "non-finite numeric_value"});
            if (ev.time < min_valid_time() || ev.time >= max_valid_time())
                report.violations.push_back({id, i, "timestamp outside [1900-01-01, 2300-01-01)"});
        }
        report.duplicate_time_counts[id] = dups;
    }
    return report;
}

std::string ValidationReport::to_json() const {
    json j;
    j["subject_count"] = events_per_subject.size();
    j["violation_count"] = violations.size();
    json per_subject = json::object();
    for (const auto& [id, n] : events_per_subject) {
        per_subject[id] = {{"events", n}, {"duplicate_times", duplicate_time_counts.at(id)}};
    }
    j["subjects"] = per_subject;
    json v = json::array();
    for (const auto& viol : violations)
        v.push_back({{"subject_id", viol.subject_id}, {"event_index", viol.event_index}, {"message", viol.message}});
    j["violations"] = v;
    return j.dump(2);
}

CohortSplit split_cohort(const EventStream& stream, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must be in (0,1)");
    if (stream.subject_count() < 2) throw std::runtime_error("cohort too small to split");

    std::vector<std::string> subjects = stream.subjects();
    std::sort(subjects.begin(), subjects.end());
    Rng rng(seed);
    rng.shuffle(subjects);

    const auto n = subjects.size();
    auto n_train = static_cast<size_t>(std::llround(ratio * static_cast<double>(n)));
    n_train = std::clamp<size_t>(n_train, 1, n - 1);

    CohortSplit split;
    split.ratio = ratio;
    split.seed = seed;
    split.train_subjects.assign(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test_subjects.assign(subjects.begin() + static_cast<std::ptrdiff_t>(n_train), subjects.end());
    std::sort(split.train_subjects.begin(), split.train_subjects.end());
    std::sort(split.test_subjects.begin(), split.test_subjects.end());
    return split;
}

EventStream filter_subjects(const EventStream& stream, const std::vector<std::string>& subjects) {
    std::vector<Event> kept;
    for (const auto& id : subjects) {
        if (const SubjectRange* r = stream.find_subject(id)) {
            for (size_t i = r->begin; i < r->end; ++i) kept.push_back(stream.events()[i]);
        }
    }
    return EventStream::from_events(std::move(kept));
}

}  // namespace ethos
