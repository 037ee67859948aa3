#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mixdpo::corpus {

// One prompt with a preferred and a dispreferred response plus the rating
// scores they were annotated with.
struct PreferencePair {
    std::int64_t pair_id = 0;  // line index in the source file, 0-based
    std::string prompt_text;
    std::string chosen_text;
    std::string rejected_text;
    double score_chosen = 0.0;
    double score_rejected = 0.0;
    std::optional<double> difficulty_override;
};

struct TokenizedPair {
    std::int64_t pair_id = 0;
    std::vector<int> prompt_tokens;    // [BOS] ++ prompt bytes
    std::vector<int> chosen_tokens;    // response bytes ++ [EOS], tail-truncated to fit
    std::vector<int> rejected_tokens;  // same layout as chosen_tokens
};

// Byte-level vocabulary: 256 raw bytes plus two specials.
struct Vocabulary {
    static constexpr int bos = 256;
    static constexpr int eos = 257;
    static constexpr int size = 258;

    static std::vector<int> encode(const std::string& text);
    // Inverse of encode; special tokens are skipped.
    static std::string decode(const std::vector<int>& tokens);
};

// JSONL field names, remappable for datasets with different schemas.
struct FieldMap {
    std::string prompt = "prompt";
    std::string chosen = "chosen";
    std::string rejected = "rejected";
    std::string score_chosen = "score_chosen";
    std::string score_rejected = "score_rejected";
    std::string difficulty_override = "difficulty_override";
};

struct Rejection {
    std::int64_t line_number = 0;  // 1-based
    std::string reason;
};

struct LoadReport {
    std::int64_t lines_total = 0;
    std::int64_t loaded = 0;
    std::vector<Rejection> rejections;
};

struct LoadResult {
    std::vector<PreferencePair> pairs;
    LoadReport report;
};

// Reads a JSONL preference dataset in file order. Malformed records are
// skipped and reported with their line number; an unreadable file throws.
LoadResult load_dataset(const std::string& path, const FieldMap& fields = {});

// Throws std::invalid_argument when the prompt alone leaves no room for at
// least one response token plus EOS within max_context.
TokenizedPair tokenize_pair(const PreferencePair& pair, int max_context);

struct PairRejection {
    std::int64_t pair_id = 0;
    std::string reason;
};

struct TokenizeResult {
    std::vector<TokenizedPair> pairs;
    std::vector<PairRejection> rejections;
};

// Tokenizes a whole dataset, skipping pairs whose prompt cannot fit.
TokenizeResult tokenize_dataset(const std::vector<PreferencePair>& pairs, int max_context);

}  // namespace mixdpo::corpus
