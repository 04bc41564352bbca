#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace excelformer {

enum class Task { binary, multiclass, regression };
enum class Split : std::uint8_t { train, val, test };

std::string_view to_string(Task task);
Task parse_task(std::string_view name);
bool is_classification(Task task);

/// Bad or inconsistent input data (exit code 2 at the CLI).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Column {
  std::string name;
  bool categorical = false;
  std::vector<double> numeric;           // used when !categorical
  std::vector<std::string> categories;   // used when categorical

  std::size_t size() const { return categorical ? categories.size() : numeric.size(); }
};

/// Raw table: feature columns in file order, labels, task, split tags.
struct TabularDataset {
  std::vector<Column> columns;
  std::vector<double> labels;  // class index for classification
  Task task = Task::binary;
  std::size_t classes = 2;     // 1 for regression
  std::vector<Split> splits;   // empty until split() runs
  std::vector<std::string> class_names;

  std::size_t rows() const { return labels.size(); }
  std::size_t features() const { return columns.size(); }
  bool all_numeric() const;
  std::vector<std::size_t> rows_in(Split s) const;
  /// Throws DataError when columns, labels and splits disagree.
  void validate() const;
  /// Subset of rows, preserving order and split tags.
  TabularDataset select(const std::vector<std::size_t>& rows) const;
};

}  // namespace excelformer
