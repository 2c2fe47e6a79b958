#pragma once

#include <string>
#include <vector>

#include "mmt/masking.hpp"
#include "mmt/model.hpp"
#include "mmt/training.hpp"

namespace mmt {

// One declarative document for a whole run: model (preset + overrides),
// schedules, masking. Unknown keys are rejected so typos fail fast. Every
// run logs the fully resolved form.
struct ExperimentConfig {
    ModelConfig model = ModelConfig::tiny();
    TrainSchedule pretrain_schedule{5e-4, 0.1, 64, 30, 5};
    TrainSchedule finetune_schedule{1e-4, 0.1, 64, 30, 5};
    bool finetune_use_mse = false;
    bool freeze_backbone = false;
    MaskingConfig masking;
    std::uint64_t seed = 1;

    std::string to_json() const;  // fully resolved, preset already expanded
    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig from_file(const std::string& path);
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// Field-by-field differences between two model configs, empty when equal.
std::vector<std::string> model_config_diff(const ModelConfig& a, const ModelConfig& b);

}  // namespace mmt
