#include "mixdpo/run_config.hpp"

#include <fstream>
#include <stdexcept>

namespace mixdpo {

corpus::FieldMap RunConfig::field_map() const {
    corpus::FieldMap map;
    map.prompt = prompt_field;
    map.chosen = chosen_field;
    map.rejected = rejected_field;
    map.score_chosen = score_chosen_field;
    map.score_rejected = score_rejected_field;
    map.difficulty_override = difficulty_override_field;
    return map;
}

model::ArchitectureConfig RunConfig::arch_config() const {
    model::ArchitectureConfig cfg;
    cfg.d_model = d_model;
    cfg.n_layers = n_layers;
    cfg.n_heads = n_heads;
    cfg.context_length = context_length;
    cfg.seed = seed;
    cfg.tied_output = tied_output;
    return cfg;
}

losses::LossConfig RunConfig::loss_config() const {
    losses::LossConfig cfg;
    cfg.beta = beta;
    cfg.tau = tau;
    cfg.dpop_lambda = dpop_lambda;
    cfg.nll_alpha = nll_alpha;
    cfg.variant = losses::variant_from_string(loss);
    return cfg;
}

trainer::TrainConfig RunConfig::train_config() const {
    trainer::TrainConfig cfg;
    cfg.learning_rate = lr;
    cfg.batch_size = batch_size;
    cfg.epochs = epochs;
    cfg.warmup_fraction = warmup_fraction;
    cfg.weight_decay = weight_decay;
    cfg.grad_clip_norm = grad_clip_norm;
    cfg.seed = seed;
    cfg.sft_epochs = sft_epochs;
    cfg.restart_schedule = restart_schedule;
    cfg.inline_routing = inline_routing;
    return cfg;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t consumed = 0;
        const double v = std::stod(value, &consumed);
        if (consumed != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': expected a number, got '" + value + "'");
    }
}

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t consumed = 0;
        const int v = std::stoi(value, &consumed);
        if (consumed != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': expected an integer, got '" + value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t consumed = 0;
        const std::uint64_t v = std::stoull(value, &consumed);
        if (consumed != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': expected an unsigned integer, got '" +
                                    value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw std::invalid_argument("config key '" + key + "': expected a boolean, got '" + value + "'");
}

}  // namespace

void apply_config_file(RunConfig& c, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);

    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        line_no++;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (key == "dataset") c.dataset = value;
        else if (key == "prompt_field") c.prompt_field = value;
        else if (key == "chosen_field") c.chosen_field = value;
        else if (key == "rejected_field") c.rejected_field = value;
        else if (key == "score_chosen_field") c.score_chosen_field = value;
        else if (key == "score_rejected_field") c.score_rejected_field = value;
        else if (key == "difficulty_override_field") c.difficulty_override_field = value;
        else if (key == "use_difficulty_override") c.use_difficulty_override = parse_bool(key, value);
        else if (key == "tau") c.tau = parse_double(key, value);
        else if (key == "bin_width") c.bin_width = parse_double(key, value);
        else if (key == "ordering") c.ordering = value;
        else if (key == "loss") c.loss = value;
        else if (key == "beta") c.beta = parse_double(key, value);
        else if (key == "dpop_lambda") c.dpop_lambda = parse_double(key, value);
        else if (key == "nll_alpha") c.nll_alpha = parse_double(key, value);
        else if (key == "d_model") c.d_model = parse_int(key, value);
        else if (key == "n_layers") c.n_layers = parse_int(key, value);
        else if (key == "n_heads") c.n_heads = parse_int(key, value);
        else if (key == "context_length") c.context_length = parse_int(key, value);
        else if (key == "tied_output") c.tied_output = parse_bool(key, value);
        else if (key == "lr") c.lr = parse_double(key, value);
        else if (key == "batch_size") c.batch_size = parse_int(key, value);
        else if (key == "epochs") c.epochs = parse_int(key, value);
        else if (key == "warmup_fraction") c.warmup_fraction = parse_double(key, value);
        else if (key == "weight_decay") c.weight_decay = parse_double(key, value);
        else if (key == "grad_clip_norm") c.grad_clip_norm = parse_double(key, value);
        else if (key == "sft_epochs") c.sft_epochs = parse_int(key, value);
        else if (key == "restart_schedule") c.restart_schedule = parse_bool(key, value);
        else if (key == "inline_routing") c.inline_routing = parse_bool(key, value);
        else if (key == "seed") c.seed = parse_u64(key, value);
        else if (key == "out_dir") c.out_dir = value;
        else if (key == "init_from") c.init_from = value;
        else {
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": unknown key '" + key + "'");
        }
    }
}

}  // namespace mixdpo
