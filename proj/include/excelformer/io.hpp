#pragma once

// CSV ingestion, checkpoints and result documents.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "excelformer/dataset.hpp"
#include "excelformer/preprocess.hpp"
#include "excelformer/train.hpp"
#include "json.hpp"

namespace excelformer {

inline constexpr int kCheckpointVersion = 1;
inline constexpr int kResultsVersion = 1;

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// RFC 4180-style: comma separated, double-quoted fields may hold commas,
/// quotes ("") and newlines. Ragged rows are a DataError.
CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);
std::string format_csv(const CsvTable& table);
void write_text(const std::filesystem::path& path, const std::string& text);

struct LoadOptions {
  std::string target;
  Task task = Task::binary;
  /// Columns forced to categorical even when every cell parses as a number.
  std::vector<std::string> categorical;
  /// Fixed label vocabulary (from a checkpoint); derived from the data when empty.
  std::vector<std::string> class_names;
};

/// Builds a dataset from a table. Every non-target column becomes a feature;
/// a column is numeric when all its cells parse as finite numbers. Empty
/// cells are errors naming the row and column.
TabularDataset to_dataset(const CsvTable& table, const LoadOptions& options);
TabularDataset load_dataset(const std::filesystem::path& path, const LoadOptions& options);

nlohmann::json to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FeaturePipeline& p);
FeaturePipeline pipeline_from_json(const nlohmann::json& j);

struct Checkpoint {
  TrainedModel trained;
  FeaturePipeline pipeline;
  std::string target;
  std::vector<std::string> class_names;
};

nlohmann::json checkpoint_to_json(const Checkpoint& c);
/// Throws DataError on a wrong format tag or version.
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace excelformer
