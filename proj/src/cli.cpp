#include "mixdpo/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "mixdpo/checkpoint.hpp"
#include "mixdpo/csv.hpp"
#include "mixdpo/curriculum.hpp"
#include "mixdpo/difficulty.hpp"
#include "mixdpo/grad_check.hpp"
#include "mixdpo/run_config.hpp"

namespace mixdpo {

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binds every RunConfig field to a flag; after parsing, resolve() layers
// defaults < config file < flags the user actually passed.
class ConfigBinder {
public:
    void bind(CLI::App* cmd) {
        cmd->add_option("--config", config_path_, "key = value config file");
        add(cmd, "--dataset", &RunConfig::dataset, "input JSONL dataset");
        add(cmd, "--prompt-field", &RunConfig::prompt_field, "JSONL field for the prompt");
        add(cmd, "--chosen-field", &RunConfig::chosen_field, "JSONL field for the chosen response");
        add(cmd, "--rejected-field", &RunConfig::rejected_field,
            "JSONL field for the rejected response");
        add(cmd, "--score-chosen-field", &RunConfig::score_chosen_field,
            "JSONL field for the chosen score");
        add(cmd, "--score-rejected-field", &RunConfig::score_rejected_field,
            "JSONL field for the rejected score");
        add(cmd, "--difficulty-override-field", &RunConfig::difficulty_override_field,
            "JSONL field holding an externally computed difficulty");
        add_flag(cmd, "--use-difficulty-override,!--no-use-difficulty-override",
                 &RunConfig::use_difficulty_override,
                 "use the override column instead of the score margin");
        add(cmd, "--tau", &RunConfig::tau, "difficulty threshold (margin < tau routes to SFT)");
        add(cmd, "--bin-width", &RunConfig::bin_width, "margin histogram bin width");
        add(cmd, "--ordering", &RunConfig::ordering,
            "easy_first|random|file_order|easy_first_swapped");
        add(cmd, "--loss", &RunConfig::loss, "sft|dpo|mixdpo|ipo|dpop|dpo_nll|mix_ipo");
        add(cmd, "--beta", &RunConfig::beta, "implicit-reward scale");
        add(cmd, "--dpop-lambda", &RunConfig::dpop_lambda, "DPOP penalty weight");
        add(cmd, "--nll-alpha", &RunConfig::nll_alpha, "NLL term weight for dpo_nll");
        add(cmd, "--d-model", &RunConfig::d_model, "model width");
        add(cmd, "--n-layers", &RunConfig::n_layers, "transformer layers");
        add(cmd, "--n-heads", &RunConfig::n_heads, "attention heads");
        add(cmd, "--context-length", &RunConfig::context_length, "maximum sequence length");
        add_flag(cmd, "--tied-output,!--no-tied-output", &RunConfig::tied_output,
                 "tie the output projection to the token embedding");
        add(cmd, "--lr", &RunConfig::lr, "peak learning rate");
        add(cmd, "--batch-size", &RunConfig::batch_size, "pairs per optimizer step");
        add(cmd, "--epochs", &RunConfig::epochs, "passes over the curriculum plan");
        add(cmd, "--warmup-fraction", &RunConfig::warmup_fraction, "fraction of steps spent warming up");
        add(cmd, "--weight-decay", &RunConfig::weight_decay, "decoupled weight decay");
        add(cmd, "--grad-clip-norm", &RunConfig::grad_clip_norm,
            "global gradient-norm clip (<= 0 disables)");
        add(cmd, "--sft-epochs", &RunConfig::sft_epochs, "SFT pre-training passes");
        add_flag(cmd, "--restart-schedule,!--no-restart-schedule", &RunConfig::restart_schedule,
                 "restart the LR schedule at each stage boundary");
        add_flag(cmd, "--inline-routing,!--no-inline-routing", &RunConfig::inline_routing,
                 "route every batch through the hybrid loss instead of staged execution");
        add(cmd, "--seed", &RunConfig::seed, "RNG seed (init, shuffles)");
        add(cmd, "--out-dir", &RunConfig::out_dir, "output directory");
        add(cmd, "--init-from", &RunConfig::init_from, "checkpoint to start from (skips SFT pre-training)");
    }

    RunConfig resolve() const {
        RunConfig final_cfg;
        if (!config_path_.empty()) apply_config_file(final_cfg, config_path_);
        for (const auto& [opt, copy] : copies_) {
            if (opt->count() > 0) copy(final_cfg, staged_);
        }
        return final_cfg;
    }

private:
    template <typename T>
    void add(CLI::App* cmd, const std::string& flag, T RunConfig::* member,
             const std::string& desc) {
        auto* opt = cmd->add_option(flag, staged_.*member, desc)->capture_default_str();
        copies_.emplace_back(opt, [member](RunConfig& dst, const RunConfig& src) {
            dst.*member = src.*member;
        });
    }

    void add_flag(CLI::App* cmd, const std::string& flag, bool RunConfig::* member,
                  const std::string& desc) {
        auto* opt = cmd->add_flag(flag, staged_.*member, desc);
        copies_.emplace_back(opt, [member](RunConfig& dst, const RunConfig& src) {
            dst.*member = src.*member;
        });
    }

    RunConfig staged_;
    std::string config_path_;
    std::vector<std::pair<const CLI::Option*, std::function<void(RunConfig&, const RunConfig&)>>>
        copies_;
};

struct LoadedData {
    std::vector<corpus::PreferencePair> pairs;
    std::vector<corpus::TokenizedPair> tokenized;
    std::vector<difficulty::DifficultyRecord> records;
};

corpus::LoadResult load_or_throw(const RunConfig& cfg) {
    if (cfg.dataset.empty()) throw DataError("no dataset given (use --dataset or a config file)");
    corpus::LoadResult loaded;
    try {
        loaded = corpus::load_dataset(cfg.dataset, cfg.field_map());
    } catch (const std::runtime_error& e) {
        throw DataError(e.what());
    }
    for (const auto& rej : loaded.report.rejections) {
        std::cerr << "warning: line " << rej.line_number << " skipped: " << rej.reason << "\n";
    }
    if (loaded.pairs.empty()) throw DataError("dataset has no usable pairs: " + cfg.dataset);
    return loaded;
}

// Loads, tokenizes, and scores; pairs whose prompt cannot fit are dropped from
// every downstream view so the modules all see the same pair set.
LoadedData prepare(const RunConfig& cfg) {
    LoadedData data;
    data.pairs = load_or_throw(cfg).pairs;

    auto tokenized = corpus::tokenize_dataset(data.pairs, cfg.context_length);
    for (const auto& rej : tokenized.rejections) {
        std::cerr << "warning: pair " << rej.pair_id << " skipped: " << rej.reason << "\n";
    }
    if (!tokenized.rejections.empty()) {
        std::vector<corpus::PreferencePair> kept;
        kept.reserve(tokenized.pairs.size());
        std::size_t ti = 0;
        for (const auto& pair : data.pairs) {
            if (ti < tokenized.pairs.size() && tokenized.pairs[ti].pair_id == pair.pair_id) {
                kept.push_back(pair);
                ti++;
            }
        }
        data.pairs = std::move(kept);
    }
    data.tokenized = std::move(tokenized.pairs);
    if (data.pairs.empty()) throw DataError("no pair fits the context length");

    try {
        data.records = difficulty::score_dataset(data.pairs, cfg.tau, cfg.use_difficulty_override);
    } catch (const std::exception& e) {
        throw DataError(e.what());
    }
    return data;
}

void ensure_out_dir(const RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw DataError("cannot create out dir '" + cfg.out_dir + "': " + ec.message());
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
    return (fs::path(cfg.out_dir) / name).string();
}

int cmd_inspect(const RunConfig& cfg) {
    const LoadedData data = prepare(cfg);
    const auto histogram = difficulty::margin_histogram(data.records, cfg.bin_width);

    ensure_out_dir(cfg);
    const std::string hist_path = out_path(cfg, "histogram.csv");
    {
        std::ofstream out(hist_path, std::ios::binary);
        if (!out) throw DataError("cannot write " + hist_path);
        out << "bin_lo,bin_hi,count\n";
        for (std::size_t i = 0; i < histogram.counts().size(); ++i) {
            out << fmt6(histogram.bin_edges()[i]) << ',' << fmt6(histogram.bin_edges()[i + 1])
                << ',' << histogram.counts()[i] << '\n';
        }
    }

    std::int64_t difficult = 0;
    for (const auto& rec : data.records) difficult += rec.route;
    std::cout << "pairs=" << data.records.size() << "\n";
    std::cout << "fraction_below(1.0)=" << fmt6(histogram.fraction_below(1.0)) << "\n";
    std::cout << "difficult(tau=" << fmt6(cfg.tau) << ")=" << difficult << "\n";
    std::cout << "histogram=" << hist_path << "\n";
    return kExitOk;
}

int cmd_plan(const RunConfig& cfg) {
    const LoadedData data = prepare(cfg);
    const auto ordering = curriculum::ordering_from_string(cfg.ordering);
    const auto plan = curriculum::build_plan(data.records, ordering, cfg.batch_size, cfg.seed);

    ensure_out_dir(cfg);
    curriculum::write_plan_manifest(plan, out_path(cfg, "plan.csv"));
    difficulty::write_routing_manifest(data.records, out_path(cfg, "routing.csv"));
    std::cout << "stage1=" << plan.stage1_ids.size() << " stage2=" << plan.stage2_ids.size()
              << "\n";
    return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
    const LoadedData data = prepare(cfg);
    const losses::LossConfig loss_cfg = cfg.loss_config();
    const trainer::TrainConfig train_cfg = cfg.train_config();
    ensure_out_dir(cfg);

    model::PolicyParameters params = [&] {
        if (!cfg.init_from.empty()) {
            try {
                return checkpoint::load_checkpoint(cfg.init_from);
            } catch (const std::runtime_error& e) {
                throw DataError(e.what());
            }
        }
        model::PolicyParameters fresh = model::init_params(cfg.arch_config());
        std::vector<trainer::TrainStepMetrics> pretrain_metrics;
        try {
            fresh = trainer::pretrain_sft(std::move(fresh), data.tokenized, train_cfg,
                                          &pretrain_metrics);
        } catch (const std::runtime_error& e) {
            throw NumericError(e.what());
        }
        trainer::write_metrics_csv(pretrain_metrics, out_path(cfg, "pretrain_metrics.csv"));
        return fresh;
    }();

    const model::PolicyParameters reference = model::snapshot_reference(params);
    checkpoint::save_checkpoint(reference, out_path(cfg, "reference.ckpt"),
                                {cfg.seed, 0, "reference"});

    const auto ordering = curriculum::ordering_from_string(cfg.ordering);
    const auto plan = curriculum::build_plan(data.records, ordering, cfg.batch_size, cfg.seed);
    curriculum::write_plan_manifest(plan, out_path(cfg, "plan.csv"));
    difficulty::write_routing_manifest(data.records, out_path(cfg, "routing.csv"));

    const trainer::StageEndHook hook = [&](const std::string& stage,
                                           const model::PolicyParameters& p, int step) {
        checkpoint::save_checkpoint(p, out_path(cfg, "stage_" + stage + ".ckpt"),
                                    {cfg.seed, step, stage});
    };
    trainer::TrainResult result =
        trainer::train(std::move(params), reference, plan, data.tokenized, data.records, loss_cfg,
                       train_cfg, hook);

    trainer::write_metrics_csv(result.metrics, out_path(cfg, "metrics.csv"));
    if (result.diverged) {
        std::cerr << "training diverged at step " << result.diverged_step
                  << "; partial metrics kept\n";
        return kExitNumeric;
    }
    trainer::write_displacement_csv(result.displacement, out_path(cfg, "displacement.csv"));
    const int last_step = result.metrics.empty() ? 0 : result.metrics.back().step;
    checkpoint::save_checkpoint(result.params, out_path(cfg, "final.ckpt"),
                                {cfg.seed, last_step, "final"});

    std::int64_t displaced = 0;
    for (const auto& rec : result.displacement) displaced += rec.displaced ? 1 : 0;
    std::cout << "steps=" << last_step << " displaced=" << displaced << "/"
              << result.displacement.size() << " out_dir=" << cfg.out_dir << "\n";
    return kExitOk;
}

int cmd_grad_check(const RunConfig& cfg, const std::string& corrupt_tensor) {
    // Always runs on the miniature architecture; only the seed and the loss
    // hyperparameters come from the config.
    const model::ArchitectureConfig arch = grad_check::ArchitectureDefaults::miniature(cfg.seed);
    const std::int64_t count = model::param_count(arch);
    if (count > 20000) {
        std::cerr << "grad-check requires a miniature model (" << count << " params > 20000)\n";
        return kExitUsage;
    }

    const auto started = std::chrono::steady_clock::now();
    const auto result = grad_check::run_grad_check(arch, cfg.loss_config(), 1e-5, corrupt_tensor);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    // the report itself is deterministic for a fixed seed; timing goes to stderr
    constexpr double kTolerance = 1e-4;
    std::printf("grad-check params=%lld h=1e-05 tol=%.0e\n",
                static_cast<long long>(result.parameter_count), kTolerance);
    for (const auto& r : result.per_loss) {
        const bool ok = r.max_rel_error <= kTolerance;
        std::printf("%-8s max_rel_err=%.3e worst=%-16s %s\n", losses::to_string(r.variant).c_str(),
                    r.max_rel_error, r.worst_tensor.c_str(), ok ? "PASS" : "FAIL");
    }
    std::printf("overall=%s\n", result.passed(kTolerance) ? "PASS" : "FAIL");
    std::fprintf(stderr, "elapsed=%.2fs\n", seconds);
    return result.passed(kTolerance) ? kExitOk : kExitNumeric;
}

struct MetricsFile {
    std::string run_name;
    std::vector<std::string> rows;       // raw data rows
    trainer::TrainStepMetrics last_row;  // parsed final row
    double displaced_fraction = std::nan("");
};

MetricsFile read_metrics_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open metrics file: " + path);
    std::string header;
    std::getline(in, header);
    const std::string expected =
        "step,stage,loss,reward_accuracy,reward_margin,mean_lp_chosen,mean_lp_rejected,lr,"
        "grad_norm";
    if (header != expected) throw DataError("unexpected metrics header in " + path);

    MetricsFile file;
    const fs::path p(path);
    file.run_name = p.has_parent_path() && !p.parent_path().filename().string().empty() &&
                            p.parent_path().filename().string() != "."
                        ? p.parent_path().filename().string()
                        : p.stem().string();

    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() != 9) throw DataError("malformed metrics row in " + path + ": " + line);
        try {
            file.last_row = {std::stoi(cols[0]), cols[1],          std::stod(cols[2]),
                             std::stod(cols[3]), std::stod(cols[4]), std::stod(cols[5]),
                             std::stod(cols[6]), std::stod(cols[7]), std::stod(cols[8])};
        } catch (const std::exception&) {
            throw DataError("malformed metrics row in " + path + ": " + line);
        }
        file.rows.push_back(line);
    }
    if (file.rows.empty()) throw DataError("metrics file has no rows: " + path);

    const fs::path sibling = p.parent_path() / "displacement.csv";
    std::ifstream disp(sibling);
    if (disp) {
        std::string dline;
        std::getline(disp, dline);  // header
        std::int64_t total = 0, displaced = 0;
        while (std::getline(disp, dline)) {
            if (dline.empty()) continue;
            total++;
            const auto last_comma = dline.find_last_of(',');
            if (last_comma != std::string::npos && dline.substr(last_comma + 1) == "1") displaced++;
        }
        if (total > 0) {
            file.displaced_fraction = static_cast<double>(displaced) / static_cast<double>(total);
        }
    }
    return file;
}

int cmd_report(const RunConfig& cfg, const std::vector<std::string>& metrics_paths) {
    std::vector<MetricsFile> files;
    for (const auto& path : metrics_paths) files.push_back(read_metrics_file(path));
    std::sort(files.begin(), files.end(),
              [](const MetricsFile& a, const MetricsFile& b) { return a.run_name < b.run_name; });

    std::printf("%-24s %-16s %12s %12s %14s %16s\n", "run", "final_stage", "loss", "reward_acc",
                "reward_margin", "displaced_frac");
    for (const auto& f : files) {
        std::printf("%-24s %-16s %12s %12s %14s %16s\n", f.run_name.c_str(),
                    f.last_row.stage.c_str(), fmt6(f.last_row.loss).c_str(),
                    fmt6(f.last_row.reward_accuracy).c_str(),
                    fmt6(f.last_row.reward_margin).c_str(),
                    std::isnan(f.displaced_fraction) ? "nan"
                                                     : fmt6(f.displaced_fraction).c_str());
    }

    ensure_out_dir(cfg);
    const std::string long_path = out_path(cfg, "report.csv");
    std::ofstream out(long_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + long_path);
    out << "run,step,stage,loss,reward_accuracy,reward_margin,mean_lp_chosen,mean_lp_rejected,lr,"
           "grad_norm\n";
    for (const auto& f : files) {
        for (const auto& row : f.rows) out << f.run_name << ',' << row << '\n';
    }
    std::cout << "report=" << long_path << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"difficulty-aware preference optimization toolkit"};
    app.require_subcommand(1);

    ConfigBinder inspect_cfg, plan_cfg, train_cfg, grad_cfg, report_cfg;
    std::string dataset_arg;
    std::string corrupt_tensor;
    std::vector<std::string> metrics_paths;

    auto* inspect = app.add_subcommand("inspect", "margin distribution and routing counts");
    inspect->add_option("dataset_path", dataset_arg, "JSONL dataset path");
    inspect_cfg.bind(inspect);

    auto* plan = app.add_subcommand("plan", "build and export a curriculum plan");
    plan->add_option("dataset_path", dataset_arg, "JSONL dataset path");
    plan_cfg.bind(plan);

    auto* train = app.add_subcommand("train", "SFT pre-training, staged preference training");
    train_cfg.bind(train);

    auto* grad = app.add_subcommand("grad-check", "finite-difference gradient verification");
    grad->add_option("--corrupt-tensor", corrupt_tensor,
                     "perturb the named analytic gradient block (negative control)");
    grad_cfg.bind(grad);

    auto* report = app.add_subcommand("report", "summarize one or more metrics files");
    report->add_option("metrics", metrics_paths, "metrics CSV paths")->required();
    report_cfg.bind(report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (inspect->parsed()) {
            RunConfig cfg = inspect_cfg.resolve();
            if (!dataset_arg.empty()) cfg.dataset = dataset_arg;
            return cmd_inspect(cfg);
        }
        if (plan->parsed()) {
            RunConfig cfg = plan_cfg.resolve();
            if (!dataset_arg.empty()) cfg.dataset = dataset_arg;
            return cmd_plan(cfg);
        }
        if (train->parsed()) return cmd_train(train_cfg.resolve());
        if (grad->parsed()) return cmd_grad_check(grad_cfg.resolve(), corrupt_tensor);
        if (report->parsed()) return cmd_report(report_cfg.resolve(), metrics_paths);
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace mixdpo
