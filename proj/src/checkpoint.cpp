#include "mixdpo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mixdpo::checkpoint {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[12] = {'M', 'I', 'X', 'D', 'P', 'O', 'C', 'K', 'P', 'T', '1', '\n'};

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& value) {
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
}

}  // namespace

void save_checkpoint(const model::PolicyParameters& params, const std::string& path,
                     const CheckpointMeta& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);

    out.write(kMagic, sizeof(kMagic));
    const model::ArchitectureConfig& c = params.config;
    write_pod(out, static_cast<std::int32_t>(c.vocab_size));
    write_pod(out, static_cast<std::int32_t>(c.d_model));
    write_pod(out, static_cast<std::int32_t>(c.n_layers));
    write_pod(out, static_cast<std::int32_t>(c.n_heads));
    write_pod(out, static_cast<std::int32_t>(c.context_length));
    write_pod(out, static_cast<std::int32_t>(c.tied_output ? 1 : 0));
    write_pod(out, static_cast<std::uint64_t>(c.seed));

    model::visit_tensors(params, [&](const std::string&, model::TensorKind, const double* data,
                                     std::int64_t n) {
        out.write(reinterpret_cast<const char*>(data),
                  static_cast<std::streamsize>(n) * static_cast<std::streamsize>(sizeof(double)));
    });
    if (!out) throw std::runtime_error("short write on checkpoint: " + path);

    std::ofstream manifest(path + ".manifest", std::ios::binary);
    if (!manifest) throw std::runtime_error("cannot write checkpoint manifest: " + path);
    manifest << "seed = " << meta.seed << "\n"
             << "step = " << meta.step << "\n"
             << "stage = " << meta.stage << "\n";
}

model::PolicyParameters load_checkpoint(const std::string& path, CheckpointMeta* meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);

    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a checkpoint file (bad magic): " + path);
    }

    model::ArchitectureConfig cfg;
    std::int32_t vocab = 0, d_model = 0, n_layers = 0, n_heads = 0, context = 0, tied = 0;
    std::uint64_t seed = 0;
    read_pod(in, vocab);
    read_pod(in, d_model);
    read_pod(in, n_layers);
    read_pod(in, n_heads);
    read_pod(in, context);
    read_pod(in, tied);
    read_pod(in, seed);
    if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
    cfg.vocab_size = vocab;
    cfg.d_model = d_model;
    cfg.n_layers = n_layers;
    cfg.n_heads = n_heads;
    cfg.context_length = context;
    cfg.tied_output = tied != 0;
    cfg.seed = seed;

    model::PolicyParameters params = model::init_params(cfg);
    model::visit_tensors(params, [&](const std::string& name, model::TensorKind, double* data,
                                     std::int64_t n) {
        in.read(reinterpret_cast<char*>(data),
                static_cast<std::streamsize>(n) * static_cast<std::streamsize>(sizeof(double)));
        if (!in) throw std::runtime_error("truncated checkpoint tensor " + name + ": " + path);
    });

    if (meta) {
        std::ifstream manifest(path + ".manifest");
        if (manifest) {
            std::string line;
            while (std::getline(manifest, line)) {
                const auto eq = line.find('=');
                if (eq == std::string::npos) continue;
                const auto trim = [](const std::string& s) {
                    const auto b = s.find_first_not_of(" \t");
                    const auto e = s.find_last_not_of(" \t\r");
                    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
                };
                const std::string key = trim(line.substr(0, eq));
                const std::string value = trim(line.substr(eq + 1));
                if (key == "seed") meta->seed = std::stoull(value);
                else if (key == "step") meta->step = std::stoll(value);
                else if (key == "stage") meta->stage = value;
            }
        }
    }
    return params;
}

}  // namespace mixdpo::checkpoint
