#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rrpo/common.hpp"

namespace rrpo::spans {

// Inclusive 1-based token range, matching the dataset file convention.
// Internally everything converts to 0-based offsets.
struct SpanRange {
    int start = 1;
    int end = 1;
    int length() const { return end - start + 1; }
};

struct SpanEntry {
    int phrase_id = 0;  // strictly positive; 0 marks ignored tokens
    SpanRange pref;     // range into the preferred response
    SpanRange nonpref;  // range into the non-preferred response
};

struct SpanTable {
    std::vector<SpanEntry> entries;
};

struct PreferencePair {
    std::string id;
    std::vector<int> prompt;
    std::vector<int> preferred;
    std::vector<int> non_preferred;
    SpanTable spans;
    std::pair<std::string, std::string> concept_key;  // (correct, incorrect)
};

// Which losses a pair must satisfy: coarse losses tolerate zero spans,
// refined losses do not.
enum class SpanNeed { coarse, refined };

// Returns every violated invariant; empty means ok.
std::vector<std::string> validate(const PreferencePair& pair,
                                  SpanNeed need = SpanNeed::refined);

// Phrase-id sequences for (preferred, non_preferred): position p carries
// phrase_id k iff p lies inside phrase k's range, else 0.
std::pair<std::vector<int>, std::vector<int>> to_phrase_ids(const PreferencePair& pair);

// Keeps the first pair per distinct concept_key, preserving order.
std::vector<PreferencePair> dedup(std::vector<PreferencePair> pairs);

// Lowercase + collapse runs of whitespace to single spaces + trim.
std::string normalize_concept(std::string_view s);

// Line-delimited dataset file, one JSON record per pair.
void write_jsonl(const std::filesystem::path& path, const std::vector<PreferencePair>& pairs);
std::vector<PreferencePair> read_jsonl(const std::filesystem::path& path);
std::string to_json_line(const PreferencePair& pair);

// FNV-1a over the canonical serialization; used to pin checkpoints to data.
uint64_t dataset_hash(const std::vector<PreferencePair>& pairs);

}  // namespace rrpo::spans
