#pragma once

#include <cstdint>
#include <string>

#include "mixdpo/model.hpp"

namespace mixdpo::checkpoint {

struct CheckpointMeta {
    std::uint64_t seed = 0;
    std::int64_t step = 0;
    std::string stage = "init";
};

// Binary container: magic "MIXDPOCKPT1\n", a fixed-field architecture header,
// then each tensor's raw little-endian float64 data in visit_tensors order.
// A sidecar text manifest (<path>.manifest) records seed, step, and stage.
void save_checkpoint(const model::PolicyParameters& params, const std::string& path,
                     const CheckpointMeta& meta);

model::PolicyParameters load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

}  // namespace mixdpo::checkpoint
