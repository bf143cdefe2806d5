#include "ethos/vocabulary.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "ethos/intervals.hpp"

namespace ethos {
namespace {

std::uint64_t fnv1a(std::uint64_t h, const std::string& s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    // Separator byte so that ["ab","c"] and ["a","bc"] hash differently.
    h ^= 0xff;
    h *= 1099511628211ULL;
    return h;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    id_to_token_ = std::move(tokens);
    token_to_id_.reserve(id_to_token_.size());
    std::uint64_t h = 1469598103934665603ULL;
    for (TokenId id = 0; id < id_to_token_.size(); ++id) {
        token_to_id_[id_to_token_[id]] = id;
        h = fnv1a(h, id_to_token_[id]);
    }
    fingerprint_ = h;
}

std::optional<TokenId> Vocabulary::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
}

const std::string& Vocabulary::token_of(TokenId id) const {
    if (id >= id_to_token_.size()) throw std::out_of_range("token id out of range");
    return id_to_token_[id];
}

std::string Vocabulary::group_of(const std::string& token) {
    const size_t pos = token.find("//");
    if (pos != std::string::npos) return token.substr(0, pos);
    if (IntervalScale::instance().is_interval_label(token)) return "interval";
    return token;
}

TokenId Vocabulary::timeline_end_id() const {
    auto id = id_of(kTimelineEndToken);
    if (!id) throw std::runtime_error("vocabulary is missing TIMELINE_END");
    return *id;
}

TokenId Vocabulary::id_or_unknown(const std::string& token) const {
    if (auto id = id_of(token)) return *id;
    const std::string group = group_of(token);
    if (group == "ICD_CM") {
        const size_t prefix = group.size() + 2;
        if (token.size() > prefix + 3) {
            if (auto id = id_of(token.substr(0, prefix + 3))) return *id;
        }
    }
    if (auto id = id_of(group + "//" + kUnknownToken)) return *id;
    if (auto id = id_of(kUnknownToken)) return *id;
    throw std::runtime_error("vocabulary has no UNKNOWN fallback for token '" + token + "'");
}

std::string Vocabulary::to_json() const {
    nlohmann::json j;
    j["tokens"] = id_to_token_;
    nlohmann::json groups = nlohmann::json::object();
    for (const auto& t : id_to_token_) groups[t] = group_of(t);
    j["groups"] = groups;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fingerprint_));
    j["fingerprint"] = buf;
    return j.dump(2);
}

Vocabulary Vocabulary::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    Vocabulary v(j.at("tokens").get<std::vector<std::string>>());
    if (j.contains("fingerprint")) {
        const std::uint64_t fp = std::stoull(j["fingerprint"].get<std::string>(), nullptr, 16);
        if (fp != v.fingerprint()) throw std::runtime_error("vocabulary fingerprint mismatch in file");
    }
    return v;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out.is_open()) throw std::runtime_error("cannot write vocabulary file '" + path + "'");
    out << to_json() << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) throw std::runtime_error("cannot open vocabulary file '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

}  // namespace ethos
