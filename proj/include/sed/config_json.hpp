#pragma once

// JSON config file mirroring the runtime config structs. CLI flags override
// file values. Desk-scale defaults apply when a field (or the whole file) is
// absent.

#include <string>

#include "sed/bench.hpp"
#include "sed/cer.hpp"
#include "sed/model.hpp"
#include "sed/train.hpp"

namespace sed {

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    CerConfig cer;
};

RunConfig load_run_config(const std::string& path);
void apply_run_config_json(RunConfig& cfg, const std::string& json_text,
                           const std::string& origin);
std::string run_config_to_json(const RunConfig& cfg);

std::string bench_record_to_json(const BenchRecord& rec);

}  // namespace sed
