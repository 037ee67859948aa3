#include "mixdpo/corpus.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace mixdpo::corpus {

namespace {

using nlohmann::json;

bool extract_string(const json& record, const std::string& key, std::string& out) {
    auto it = record.find(key);
    if (it == record.end() || !it->is_string()) return false;
    out = it->get<std::string>();
    return true;
}

// Accepts JSON numbers and numeric strings; preference dumps mix both.
bool extract_score(const json& record, const std::string& key, double& out) {
    auto it = record.find(key);
    if (it == record.end()) return false;
    if (it->is_number()) {
        out = it->get<double>();
        return true;
    }
    if (it->is_string()) {
        const std::string& s = it->get<std::string>();
        try {
            std::size_t consumed = 0;
            out = std::stod(s, &consumed);
            return consumed == s.size() && !s.empty();
        } catch (const std::exception&) {
            return false;
        }
    }
    return false;
}

bool blank(const std::string& line) {
    return line.find_first_not_of(" \t\r") == std::string::npos;
}

}  // namespace

std::vector<int> Vocabulary::encode(const std::string& text) {
    std::vector<int> tokens;
    tokens.reserve(text.size());
    for (unsigned char c : text) tokens.push_back(static_cast<int>(c));
    return tokens;
}

std::string Vocabulary::decode(const std::vector<int>& tokens) {
    std::string text;
    text.reserve(tokens.size());
    for (int t : tokens) {
        if (t >= 0 && t < 256) text.push_back(static_cast<char>(t));
    }
    return text;
}

LoadResult load_dataset(const std::string& path, const FieldMap& fields) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);

    LoadResult result;
    std::string line;
    std::int64_t line_index = 0;
    while (std::getline(in, line)) {
        const std::int64_t pair_id = line_index++;
        const std::int64_t line_number = pair_id + 1;
        if (blank(line)) continue;
        result.report.lines_total++;

        json record = json::parse(line, nullptr, /*allow_exceptions=*/false);
        if (record.is_discarded() || !record.is_object()) {
            result.report.rejections.push_back({line_number, "invalid JSON object"});
            continue;
        }

        PreferencePair pair;
        pair.pair_id = pair_id;
        std::string missing;
        if (!extract_string(record, fields.prompt, pair.prompt_text)) missing = fields.prompt;
        else if (!extract_string(record, fields.chosen, pair.chosen_text)) missing = fields.chosen;
        else if (!extract_string(record, fields.rejected, pair.rejected_text)) missing = fields.rejected;
        if (!missing.empty()) {
            result.report.rejections.push_back({line_number, "missing field '" + missing + "'"});
            continue;
        }
        if (pair.prompt_text.empty() || pair.chosen_text.empty() || pair.rejected_text.empty()) {
            result.report.rejections.push_back({line_number, "empty text field"});
            continue;
        }
        if (!extract_score(record, fields.score_chosen, pair.score_chosen)) {
            result.report.rejections.push_back(
                {line_number, "missing or non-numeric field '" + fields.score_chosen + "'"});
            continue;
        }
        if (!extract_score(record, fields.score_rejected, pair.score_rejected)) {
            result.report.rejections.push_back(
                {line_number, "missing or non-numeric field '" + fields.score_rejected + "'"});
            continue;
        }
        double override_value = 0.0;
        if (record.contains(fields.difficulty_override) &&
            extract_score(record, fields.difficulty_override, override_value)) {
            pair.difficulty_override = override_value;
        }

        result.pairs.push_back(std::move(pair));
        result.report.loaded++;
    }
    return result;
}

TokenizedPair tokenize_pair(const PreferencePair& pair, int max_context) {
    TokenizedPair out;
    out.pair_id = pair.pair_id;
    out.prompt_tokens.reserve(pair.prompt_text.size() + 1);
    out.prompt_tokens.push_back(Vocabulary::bos);
    for (int t : Vocabulary::encode(pair.prompt_text)) out.prompt_tokens.push_back(t);

    const int prompt_len = static_cast<int>(out.prompt_tokens.size());
    // Room for at least one response token plus EOS; prompts are never truncated.
    if (prompt_len + 2 > max_context) {
        throw std::invalid_argument("pair " + std::to_string(pair.pair_id) +
                                    ": prompt of " + std::to_string(prompt_len) +
                                    " tokens exceeds max_context " + std::to_string(max_context));
    }

    const auto tokenize_response = [&](const std::string& text) {
        std::vector<int> tokens = Vocabulary::encode(text);
        const std::size_t max_bytes = static_cast<std::size_t>(max_context - prompt_len - 1);
        if (tokens.size() > max_bytes) tokens.resize(max_bytes);
        tokens.push_back(Vocabulary::eos);
        return tokens;
    };
    out.chosen_tokens = tokenize_response(pair.chosen_text);
    out.rejected_tokens = tokenize_response(pair.rejected_text);
    return out;
}

TokenizeResult tokenize_dataset(const std::vector<PreferencePair>& pairs, int max_context) {
    TokenizeResult result;
    result.pairs.reserve(pairs.size());
    for (const PreferencePair& pair : pairs) {
        try {
            result.pairs.push_back(tokenize_pair(pair, max_context));
        } catch (const std::invalid_argument& e) {
            result.rejections.push_back({pair.pair_id, e.what()});
        }
    }
    return result;
}

}  // namespace mixdpo::corpus
