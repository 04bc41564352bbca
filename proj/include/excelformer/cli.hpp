#pragma once

// Command-line front end: train, evaluate, rotate-exp, gradcheck, gen-data.
// Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or data error.

#include <ostream>
#include <string>
#include <vector>

#include "excelformer/model.hpp"
#include "excelformer/train.hpp"
#include "json.hpp"

namespace excelformer {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Model, optimiser and mixing settings as one flat record.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  Variant variant = Variant::full;
};

/// Overlays a flat JSON object (keys named like the struct fields, plus
/// "variant", "mix", "alpha_hid", "alpha_feat", "alpha_baseline"). Unknown
/// keys are a DataError.
void apply_config(RunConfig& config, const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace excelformer
