#pragma once

#include <cstdint>
#include <string>

#include "mixdpo/corpus.hpp"
#include "mixdpo/losses.hpp"
#include "mixdpo/model.hpp"
#include "mixdpo/trainer.hpp"

namespace mixdpo {

// Every field has a default; a config file overrides defaults and command-line
// flags override the file.
struct RunConfig {
    // corpus
    std::string dataset;
    std::string prompt_field = "prompt";
    std::string chosen_field = "chosen";
    std::string rejected_field = "rejected";
    std::string score_chosen_field = "score_chosen";
    std::string score_rejected_field = "score_rejected";
    std::string difficulty_override_field = "difficulty_override";
    bool use_difficulty_override = false;

    // difficulty / curriculum
    double tau = 0.5;
    double bin_width = 0.5;
    std::string ordering = "easy_first";

    // losses
    std::string loss = "mixdpo";
    double beta = 0.01;
    double dpop_lambda = 50.0;
    double nll_alpha = 1.0;

    // model
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 2;
    int context_length = 128;
    bool tied_output = false;

    // trainer
    double lr = 1e-3;
    int batch_size = 16;
    int epochs = 1;
    double warmup_fraction = 0.03;
    double weight_decay = 0.0;
    double grad_clip_norm = 1.0;
    int sft_epochs = 1;
    bool restart_schedule = false;
    bool inline_routing = false;

    // run
    std::uint64_t seed = 42;
    std::string out_dir = "out";
    std::string init_from;

    corpus::FieldMap field_map() const;
    model::ArchitectureConfig arch_config() const;
    losses::LossConfig loss_config() const;  // throws on an unknown loss name
    trainer::TrainConfig train_config() const;
};

// Line-oriented `key = value` file; '#' starts a comment. Unknown keys and
// unparseable values throw std::invalid_argument.
void apply_config_file(RunConfig& config, const std::string& path);

}  // namespace mixdpo
