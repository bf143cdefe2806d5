#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace ethos {

using TokenId = std::uint32_t;

inline constexpr const char* kTimelineEndToken = "TIMELINE_END";
inline constexpr const char* kUnknownToken = "UNKNOWN";

// Bijection between token strings and dense 0-based ids. Ids are assigned by
// sorted token string, so the same token set always yields the same mapping;
// the fingerprint hashes the sorted list.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> tokens);

    size_t size() const { return id_to_token_.size(); }

    std::optional<TokenId> id_of(const std::string& token) const;
    const std::string& token_of(TokenId id) const;
    bool contains(const std::string& token) const { return id_of(token).has_value(); }

    // Group label: the namespace prefix before "//" when present, "interval"
    // for elapsed-time tokens, otherwise the token itself (Q1..Q10 and bare
    // markers are their own groups).
    static std::string group_of(const std::string& token);

    std::uint64_t fingerprint() const { return fingerprint_; }

    TokenId timeline_end_id() const;

    // Lookup with fallbacks used at inference time: exact match, then the
    // 3-character form for diagnosis codes, then the group's UNKNOWN token,
    // then the global UNKNOWN.
    TokenId id_or_unknown(const std::string& token) const;

    const std::vector<std::string>& tokens() const { return id_to_token_; }

    std::string to_json() const;
    static Vocabulary from_json(const std::string& text);
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, TokenId> token_to_id_;
    std::uint64_t fingerprint_ = 0;
};

}  // namespace ethos
