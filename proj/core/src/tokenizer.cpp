#include "ethos/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace ethos {
namespace {

using nlohmann::json;

const std::set<std::string> kStaticGroups = {"GENDER", "MARITAL_STATUS", "RACE", "BMI", "AGE"};

std::string code_group(const std::string& code) {
    const size_t pos = code.find("//");
    return pos == std::string::npos ? code : code.substr(0, pos);
}

std::string payload_of(const std::string& code) {
    const size_t pos = code.find("//");
    return pos == std::string::npos ? std::string{} : code.substr(pos + 2);
}

// Linear-interpolated quantile of a sorted vector.
double quantile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) return 0.0;
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const size_t lo = static_cast<size_t>(std::floor(h));
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("truncated corpus file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::ifstream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw std::runtime_error("truncated corpus file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

QuantileBinsMap fit_all_quantiles(const EventStream& train) {
    std::unordered_map<std::string, std::vector<double>> values;
    for (const Event& ev : train.events()) {
        if (ev.numeric_value) values[ev.code].push_back(*ev.numeric_value);
    }
    QuantileBinsMap bins;
    bins.reserve(values.size());
    for (auto& [code, vals] : values) bins.emplace(code, fit_quantiles_from_values(code, std::move(vals)));
    return bins;
}

void save_bins(const QuantileBinsMap& bins, const std::string& path) {
    json j = json::object();
    std::vector<std::string> codes;
    codes.reserve(bins.size());
    for (const auto& [code, _] : bins) codes.push_back(code);
    std::sort(codes.begin(), codes.end());
    for (const auto& code : codes) {
        const QuantileBins& b = bins.at(code);
        j[code] = {{"boundaries", b.boundaries}, {"n_fit", b.n_fit}, {"degenerate", b.degenerate}};
    }
    std::ofstream out(path, std::ios::binary);
    if (!out.is_open()) throw std::runtime_error("cannot write bins file '" + path + "'");
    out << j.dump(2) << "\n";
}

QuantileBinsMap load_bins(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) throw std::runtime_error("cannot open bins file '" + path + "'");
    json j = json::parse(in);
    QuantileBinsMap bins;
    for (auto it = j.begin(); it != j.end(); ++it) {
        QuantileBins b;
        b.code = it.key();
        const auto& arr = it.value().at("boundaries");
        for (size_t i = 0; i < 9; ++i) b.boundaries[i] = arr.at(i).get<double>();
        b.n_fit = it.value().at("n_fit").get<size_t>();
        b.degenerate = it.value().at("degenerate").get<bool>();
        bins.emplace(b.code, std::move(b));
    }
    return bins;
}

std::vector<std::string> decompose_code(const std::string& code, const std::optional<std::string>& text_value) {
    const std::string group = code_group(code);
    const std::string full = text_value ? code + "//" + *text_value : code;

    if (group == "ICD_PCS") {
        const std::string payload = payload_of(code);
        if (payload.size() != 7) throw std::runtime_error("malformed PCS code '" + code + "'");
        std::vector<std::string> tokens;
        tokens.reserve(7);
        for (char c : payload) tokens.push_back(std::string("ICD_PCS//") + c);
        return tokens;
    }
    if (group == "ATC") {
        const std::string payload = payload_of(code);
        std::vector<std::string> tokens;
        tokens.push_back("ATC//" + payload.substr(0, std::min<size_t>(3, payload.size())));
        if (payload.size() > 3) tokens.push_back(std::string("ATC_4//") + payload[3]);
        if (payload.size() > 4) tokens.push_back("ATC_SFX//" + payload.substr(4));
        return tokens;
    }
    if (group == "ICD_CM") {
        const std::string payload = payload_of(code);
        return {"ICD_CM//" + payload.substr(0, std::min<size_t>(4, payload.size()))};
    }
    return {full};
}

RawTimeline emit_raw_timeline(const EventStream& stream, const std::string& subject_id,
                              const QuantileBinsMap& bins, const TokenizerConfig& cfg) {
    const SubjectRange range = stream.subject_range(subject_id);
    RawTimeline out;
    out.subject_id = subject_id;

    // Most recently known value per static attribute; remaining events form
    // the chronological body.
    std::unordered_map<std::string, const Event*> statics;
    std::vector<const Event*> body;
    TimePoint last_static_time = 0;
    for (size_t i = range.begin; i < range.end; ++i) {
        const Event& ev = stream.events()[i];
        const std::string group = code_group(ev.code);
        if (kStaticGroups.count(group)) {
            statics[group] = &ev;
            last_static_time = std::max(last_static_time, ev.time);
        } else {
            body.push_back(&ev);
        }
    }

    const TimePoint prefix_time = body.empty() ? last_static_time : body.front()->time;

    auto push = [&](const std::string& token, TimePoint t) {
        out.tokens.push_back(token);
        out.token_time.push_back(t);
    };

    if (cfg.emit_static_prefix) {
        for (const char* attr : {"GENDER", "MARITAL_STATUS", "RACE"}) {
            auto it = statics.find(attr);
            if (it == statics.end()) continue;
            for (const auto& t : decompose_code(it->second->code, it->second->text_value)) push(t, prefix_time);
        }
        if (auto it = statics.find("BMI"); it != statics.end() && it->second->numeric_value) {
            auto bit = bins.find(it->second->code);
            const int k = bit != bins.end() ? encode_numeric(*it->second->numeric_value, bit->second) : 5;
            push("BMI//Q" + std::to_string(k), prefix_time);
        }
        if (auto it = statics.find("AGE"); it != statics.end() && it->second->numeric_value) {
            const AgeTokens age = encode_age(static_cast<int>(std::llround(*it->second->numeric_value)));
            push(age.tens, prefix_time);
            push(age.ones, prefix_time);
        }
        out.static_prefix_len = out.tokens.size();
    }

    for (size_t i = 0; i < body.size(); ++i) {
        const Event& ev = *body[i];
        if (i > 0) {
            const Seconds gap = static_cast<Seconds>(ev.time - body[i - 1]->time);
            for (const auto& t : IntervalScale::instance().tokens_for_gap(gap)) push(t, ev.time);
        }
        size_t emitted = 0;
        for (const auto& t : decompose_code(ev.code, ev.text_value)) {
            push(t, ev.time);
            ++emitted;
        }
        if (ev.numeric_value) {
            auto bit = bins.find(ev.code);
            if (bit != bins.end()) {
                push(quantile_token(encode_numeric(*ev.numeric_value, bit->second)), ev.time);
                ++emitted;
            }
        }
        out.tokens_per_event.push_back(emitted);
    }

    if (out.tokens.empty()) throw std::runtime_error("empty timeline for subject '" + subject_id + "'");
    return out;
}

Vocabulary build_vocabulary(const EventStream& train, const QuantileBinsMap& bins, const TokenizerConfig& cfg) {
    if (train.empty()) throw std::runtime_error("cannot build vocabulary from an empty stream");

    std::set<std::string> tokens;
    for (const auto& id : train.subjects()) {
        RawTimeline raw;
        try {
            raw = emit_raw_timeline(train, id, bins, cfg);
        } catch (const std::runtime_error&) {
            continue;  // subjects with no usable data contribute nothing
        }
        tokens.insert(raw.tokens.begin(), raw.tokens.end());
    }

    for (const auto& bin : IntervalScale::instance().bins()) tokens.insert(bin.label);
    for (int k = 1; k <= 10; ++k) tokens.insert(quantile_token(k));
    tokens.insert(kTimelineEndToken);
    tokens.insert(kUnknownToken);

    // Group-level fallbacks and completion of derived families.
    std::set<std::string> groups;
    bool has_bmi = false;
    std::set<std::string> icd_cm_tokens;
    for (const auto& t : tokens) {
        if (t.find("//") == std::string::npos) continue;
        const std::string g = code_group(t);
        groups.insert(g);
        if (g == "BMI") has_bmi = true;
        if (g == "ICD_CM") icd_cm_tokens.insert(t);
    }
    for (const auto& g : groups) tokens.insert(g + "//" + kUnknownToken);
    if (has_bmi) {
        for (int k = 1; k <= 10; ++k) tokens.insert("BMI//Q" + std::to_string(k));
    }
    // 3-character diagnosis forms back the truncation fallback at inference.
    for (const auto& t : icd_cm_tokens) {
        const std::string payload = payload_of(t);
        if (payload.size() > 3) tokens.insert("ICD_CM//" + payload.substr(0, 3));
    }

    return Vocabulary(std::vector<std::string>(tokens.begin(), tokens.end()));
}

TokenizedTimeline tokenize_timeline(const EventStream& stream, const std::string& subject_id,
                                    const Vocabulary& vocab, const QuantileBinsMap& bins,
                                    const TokenizerConfig& cfg) {
    RawTimeline raw = emit_raw_timeline(stream, subject_id, bins, cfg);
    TokenizedTimeline out;
    out.subject_id = std::move(raw.subject_id);
    out.static_prefix_len = raw.static_prefix_len;
    out.token_time = std::move(raw.token_time);
    out.tokens.reserve(raw.tokens.size());
    for (const auto& t : raw.tokens) out.tokens.push_back(vocab.id_or_unknown(t));
    return out;
}

std::vector<TokenizedTimeline> tokenize_cohort(const EventStream& stream, const Vocabulary& vocab,
                                               const QuantileBinsMap& bins, const TokenizerConfig& cfg,
                                               std::vector<std::string>* skipped) {
    std::vector<TokenizedTimeline> out;
    out.reserve(stream.subject_count());
    for (const auto& id : stream.subjects()) {
        try {
            out.push_back(tokenize_timeline(stream, id, vocab, bins, cfg));
        } catch (const std::runtime_error&) {
            if (skipped) skipped->push_back(id);
        }
    }
    return out;
}

StatsReport corpus_stats(const std::vector<TokenizedTimeline>& timelines, const Vocabulary& vocab) {
    if (timelines.empty()) throw std::runtime_error("corpus_stats requires at least one timeline");
    StatsReport r;
    r.timeline_count = timelines.size();
    std::vector<double> lengths;
    lengths.reserve(timelines.size());
    std::set<TokenId> unique;
    std::map<std::string, std::set<TokenId>> group_unique;
    for (const auto& tl : timelines) {
        lengths.push_back(static_cast<double>(tl.tokens.size()));
        r.total_tokens += tl.tokens.size();
        for (TokenId id : tl.tokens) {
            unique.insert(id);
            const std::string g = Vocabulary::group_of(vocab.token_of(id));
            r.group_counts[g] += 1;
            group_unique[g].insert(id);
        }
    }
    std::sort(lengths.begin(), lengths.end());
    r.shortest = static_cast<size_t>(lengths.front());
    r.longest = static_cast<size_t>(lengths.back());
    r.mean = static_cast<double>(r.total_tokens) / static_cast<double>(r.timeline_count);
    r.median = quantile_sorted(lengths, 0.5);
    r.q1 = quantile_sorted(lengths, 0.25);
    r.q3 = quantile_sorted(lengths, 0.75);
    r.unique_tokens = unique.size();
    for (const auto& [g, s] : group_unique) r.group_unique[g] = s.size();
    return r;
}

std::string StatsReport::to_json() const {
    json j;
    j["tokens"] = total_tokens;
    j["timelines"] = timeline_count;
    j["lengths"] = {{"longest", longest}, {"q3", q3},       {"median", median},
                    {"mean", mean},       {"q1", q1},       {"shortest", shortest}};
    j["unique_tokens"] = unique_tokens;
    json groups = json::object();
    for (const auto& [g, n] : group_counts) groups[g] = {{"count", n}, {"unique", group_unique.at(g)}};
    j["groups"] = groups;
    return j.dump(2);
}

void save_corpus(const std::vector<TokenizedTimeline>& timelines, const Vocabulary& vocab,
                 const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out.is_open()) throw std::runtime_error("cannot write corpus file '" + path + "'");
    out.write("PHT1", 4);
    write_u32(out, 1);  // version
    write_u64(out, vocab.fingerprint());
    write_u64(out, timelines.size());
    // Offset table, patched after the records are written.
    const std::streampos table_pos = out.tellp();
    for (size_t i = 0; i < timelines.size(); ++i) write_u64(out, 0);
    std::vector<std::uint64_t> offsets(timelines.size());
    for (size_t i = 0; i < timelines.size(); ++i) {
        const auto& tl = timelines[i];
        offsets[i] = static_cast<std::uint64_t>(out.tellp());
        write_u32(out, static_cast<std::uint32_t>(tl.subject_id.size()));
        out.write(tl.subject_id.data(), static_cast<std::streamsize>(tl.subject_id.size()));
        write_u32(out, static_cast<std::uint32_t>(tl.static_prefix_len));
        write_u64(out, tl.tokens.size());
        for (TokenId id : tl.tokens) write_u32(out, id);
        // Times stored as unsigned seconds since 1900-01-01.
        for (TimePoint t : tl.token_time) write_u64(out, static_cast<std::uint64_t>(t - min_valid_time()));
    }
    out.seekp(table_pos);
    for (std::uint64_t off : offsets) write_u64(out, off);
}

std::vector<TokenizedTimeline> load_corpus(const std::string& path, const Vocabulary& vocab) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) throw std::runtime_error("cannot open corpus file '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PHT1", 4) != 0) throw std::runtime_error("bad corpus magic");
    const std::uint32_t version = read_u32(in);
    if (version != 1) throw std::runtime_error("unsupported corpus version");
    const std::uint64_t fp = read_u64(in);
    if (fp != vocab.fingerprint()) throw std::runtime_error("vocabulary drift: corpus fingerprint mismatch");
    const std::uint64_t count = read_u64(in);
    std::vector<std::uint64_t> offsets(count);
    for (auto& off : offsets) off = read_u64(in);
    std::vector<TokenizedTimeline> out;
    out.reserve(count);
    for (std::uint64_t off : offsets) {
        in.seekg(static_cast<std::streamoff>(off));
        TokenizedTimeline tl;
        const std::uint32_t id_len = read_u32(in);
        tl.subject_id.resize(id_len);
        in.read(tl.subject_id.data(), id_len);
        if (!in) throw std::runtime_error("truncated corpus file");
        tl.static_prefix_len = read_u32(in);
        const std::uint64_t n = read_u64(in);
        tl.tokens.reserve(n);
        tl.token_time.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i) tl.tokens.push_back(read_u32(in));
        for (std::uint64_t i = 0; i < n; ++i)
            tl.token_time.push_back(static_cast<TimePoint>(read_u64(in)) + min_valid_time());
        for (TokenId id : tl.tokens) {
            if (id >= vocab.size()) throw std::runtime_error("corpus token id out of vocabulary range");
        }
        out.push_back(std::move(tl));
    }
    return out;
}

void save_corpus_jsonl(const std::vector<TokenizedTimeline>& timelines, const Vocabulary& vocab,
                       const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out.is_open()) throw std::runtime_error("cannot write corpus debug file '" + path + "'");
    for (const auto& tl : timelines) {
        json j;
        j["subject_id"] = tl.subject_id;
        j["static_prefix_len"] = tl.static_prefix_len;
        json toks = json::array();
        for (size_t i = 0; i < tl.tokens.size(); ++i)
            toks.push_back({{"token", vocab.token_of(tl.tokens[i])}, {"time", format_timestamp(tl.token_time[i])}});
        j["tokens"] = toks;
        out << j.dump() << "\n";
    }
}

std::vector<TokenId> concatenate_for_training(const std::vector<TokenizedTimeline>& timelines,
                                              const Vocabulary& vocab) {
    const TokenId end_id = vocab.timeline_end_id();
    std::vector<TokenId> out;
    size_t total = 0;
    for (const auto& tl : timelines) total += tl.tokens.size() + 1;
    out.reserve(total);
    for (const auto& tl : timelines) {
        out.insert(out.end(), tl.tokens.begin(), tl.tokens.end());
        out.push_back(end_id);
    }
    return out;
}

}  // namespace ethos
