#include "rrpo/spans.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "rrpo/rng.hpp"

namespace rrpo::spans {

namespace {

using ordered_json = nlohmann::ordered_json;

// [0,0] encodes "phrase absent on this side"; validate reports it as an
// unmatched phrase rather than an out-of-bounds range.
bool absent(const SpanRange& r) { return r.start == 0 && r.end == 0; }

void check_side(std::vector<std::string>& out, const std::vector<SpanEntry>& entries,
                bool pref_side, int response_len) {
    const char* side = pref_side ? "preferred" : "non_preferred";
    std::vector<std::pair<SpanRange, int>> ranges;
    for (const auto& e : entries) {
        const SpanRange r = pref_side ? e.pref : e.nonpref;
        if (absent(r)) continue;
        if (r.start < 1 || r.end < r.start || r.end > response_len) {
            out.push_back("range: phrase " + std::to_string(e.phrase_id) + " [" +
                          std::to_string(r.start) + "," + std::to_string(r.end) + "] out of bounds on " +
                          side + " side (length " + std::to_string(response_len) + ")");
        }
        ranges.emplace_back(r, e.phrase_id);
    }
    std::sort(ranges.begin(), ranges.end(),
              [](const auto& a, const auto& b) { return a.first.start < b.first.start; });
    for (size_t i = 1; i < ranges.size(); ++i) {
        if (ranges[i].first.start <= ranges[i - 1].first.end) {
            out.push_back("overlap: phrases " + std::to_string(ranges[i - 1].second) + " and " +
                          std::to_string(ranges[i].second) + " on " + side + " side");
        }
    }
}

}  // namespace

std::vector<std::string> validate(const PreferencePair& pair, SpanNeed need) {
    std::vector<std::string> out;
    if (pair.preferred.empty() || pair.non_preferred.empty()) {
        out.push_back("empty response");
    }
    if (pair.preferred == pair.non_preferred) {
        out.push_back("responses identical: preferred must differ from non-preferred");
    }
    if (pair.spans.entries.empty() && need == SpanNeed::refined) {
        out.push_back("no spans: refined losses need at least one differing concept");
    }

    std::set<int> ids;
    for (const auto& e : pair.spans.entries) {
        if (e.phrase_id <= 0) {
            out.push_back("phrase id " + std::to_string(e.phrase_id) +
                          " not strictly positive (0 is reserved for ignored tokens)");
        }
        if (!ids.insert(e.phrase_id).second) {
            out.push_back("duplicate phrase id " + std::to_string(e.phrase_id));
        }
        if (absent(e.pref) != absent(e.nonpref)) {
            out.push_back("unmatched phrase: phrase " + std::to_string(e.phrase_id) +
                          " present on " + (absent(e.nonpref) ? "preferred" : "non_preferred") +
                          " side only");
        } else if (absent(e.pref) && absent(e.nonpref)) {
            out.push_back("phrase " + std::to_string(e.phrase_id) + " absent on both sides");
        }
    }
    check_side(out, pair.spans.entries, true, static_cast<int>(pair.preferred.size()));
    check_side(out, pair.spans.entries, false, static_cast<int>(pair.non_preferred.size()));

    // When lengths match, tokens outside all spans must agree position-wise.
    // (Zero-span pairs carry no such claim; they may differ anywhere.)
    if (!pair.spans.entries.empty() && pair.preferred.size() == pair.non_preferred.size()) {
        std::vector<bool> covered(pair.preferred.size(), false);
        for (const auto& e : pair.spans.entries) {
            auto mark = [&](const SpanRange& r) {
                for (int i = r.start - 1; i <= r.end - 1; ++i) {
                    if (i >= 0 && i < static_cast<int>(covered.size())) {
                        covered[static_cast<size_t>(i)] = true;
                    }
                }
            };
            mark(e.pref);
            mark(e.nonpref);
        }
        for (size_t i = 0; i < covered.size(); ++i) {
            if (!covered[i] && pair.preferred[i] != pair.non_preferred[i]) {
                out.push_back("tokens differ outside spans at position " + std::to_string(i + 1));
            }
        }
    }
    return out;
}

std::pair<std::vector<int>, std::vector<int>> to_phrase_ids(const PreferencePair& pair) {
    auto violations = validate(pair, SpanNeed::coarse);
    if (!violations.empty()) {
        std::string msg = "invalid pair '" + pair.id + "':";
        for (const auto& v : violations) msg += "\n  - " + v;
        throw ValidationError(msg);
    }
    std::vector<int> pref(pair.preferred.size(), 0);
    std::vector<int> nonpref(pair.non_preferred.size(), 0);
    for (const auto& e : pair.spans.entries) {
        for (int i = e.pref.start - 1; i <= e.pref.end - 1; ++i) {
            pref[static_cast<size_t>(i)] = e.phrase_id;
        }
        for (int i = e.nonpref.start - 1; i <= e.nonpref.end - 1; ++i) {
            nonpref[static_cast<size_t>(i)] = e.phrase_id;
        }
    }
    return {std::move(pref), std::move(nonpref)};
}

std::vector<PreferencePair> dedup(std::vector<PreferencePair> pairs) {
    std::vector<PreferencePair> out;
    std::set<std::pair<std::string, std::string>> seen;
    for (auto& p : pairs) {
        auto key = std::make_pair(normalize_concept(p.concept_key.first),
                                  normalize_concept(p.concept_key.second));
        if (seen.insert(key).second) out.push_back(std::move(p));
    }
    return out;
}

std::string normalize_concept(std::string_view s) {
    std::string out;
    bool in_space = true;  // also trims leading whitespace
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!in_space) out.push_back(' ');
            in_space = true;
        } else {
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

std::string to_json_line(const PreferencePair& pair) {
    ordered_json j;
    j["id"] = pair.id;
    j["prompt_tokens"] = pair.prompt;
    j["preferred_tokens"] = pair.preferred;
    j["non_preferred_tokens"] = pair.non_preferred;
    ordered_json spans_j = ordered_json::array();
    for (const auto& e : pair.spans.entries) {
        ordered_json s;
        s["phrase_id"] = e.phrase_id;
        s["pref"] = {e.pref.start, e.pref.end};
        s["nonpref"] = {e.nonpref.start, e.nonpref.end};
        spans_j.push_back(std::move(s));
    }
    j["spans"] = std::move(spans_j);
    j["concept_key"] = {pair.concept_key.first, pair.concept_key.second};
    return j.dump();
}

void write_jsonl(const std::filesystem::path& path, const std::vector<PreferencePair>& pairs) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open dataset file for writing: " + path.string());
    for (const auto& p : pairs) os << to_json_line(p) << '\n';
    if (!os) throw FormatError("failed writing dataset file: " + path.string());
}

std::vector<PreferencePair> read_jsonl(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ArtifactError("dataset file not found: " + path.string());
    std::vector<PreferencePair> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": bad JSON record: " + e.what());
        }
        try {
            PreferencePair p;
            p.id = j.at("id").get<std::string>();
            p.prompt = j.at("prompt_tokens").get<std::vector<int>>();
            p.preferred = j.at("preferred_tokens").get<std::vector<int>>();
            p.non_preferred = j.at("non_preferred_tokens").get<std::vector<int>>();
            for (const auto& s : j.at("spans")) {
                SpanEntry e;
                e.phrase_id = s.at("phrase_id").get<int>();
                e.pref = {s.at("pref").at(0).get<int>(), s.at("pref").at(1).get<int>()};
                e.nonpref = {s.at("nonpref").at(0).get<int>(), s.at("nonpref").at(1).get<int>()};
                p.spans.entries.push_back(e);
            }
            p.concept_key = {j.at("concept_key").at(0).get<std::string>(),
                             j.at("concept_key").at(1).get<std::string>()};
            out.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": missing or malformed field: " + e.what());
        }
    }
    return out;
}

uint64_t dataset_hash(const std::vector<PreferencePair>& pairs) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : pairs) {
        const std::string line = to_json_line(p);
        for (unsigned char c : line) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        h ^= '\n';
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace rrpo::spans
