#include "excelformer/dataset.hpp"

#include <algorithm>
#include <cmath>

namespace excelformer {

std::string_view to_string(Task task) {
  switch (task) {
    case Task::binary: return "binary";
    case Task::multiclass: return "multiclass";
    case Task::regression: return "regression";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  if (name == "binary") return Task::binary;
  if (name == "multiclass") return Task::multiclass;
  if (name == "regression") return Task::regression;
  throw DataError("unknown task '" + std::string(name) + "' (binary|multiclass|regression)");
}

bool is_classification(Task task) { return task != Task::regression; }

bool TabularDataset::all_numeric() const {
  return std::none_of(columns.begin(), columns.end(), [](const Column& c) { return c.categorical; });
}

std::vector<std::size_t> TabularDataset::rows_in(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == s) out.push_back(i);
  }
  return out;
}

void TabularDataset::validate() const {
  const std::size_t n = rows();
  for (const Column& c : columns) {
    if (c.size() != n) {
      throw DataError("column '" + c.name + "' has " + std::to_string(c.size()) +
                      " rows, expected " + std::to_string(n));
    }
  }
  if (!splits.empty() && splits.size() != n) throw DataError("split tags do not cover every row");
  if (is_classification(task)) {
    for (double y : labels) {
      if (y < 0 || y >= static_cast<double>(classes) || y != std::floor(y)) {
        throw DataError("class label " + std::to_string(y) + " outside [0, " +
                        std::to_string(classes) + ")");
      }
    }
  }
}

TabularDataset TabularDataset::select(const std::vector<std::size_t>& rows) const {
  TabularDataset out;
  out.task = task;
  out.classes = classes;
  out.class_names = class_names;
  for (const Column& c : columns) {
    Column nc{c.name, c.categorical, {}, {}};
    for (std::size_t r : rows) {
      if (c.categorical) nc.categories.push_back(c.categories[r]);
      else nc.numeric.push_back(c.numeric[r]);
    }
    out.columns.push_back(std::move(nc));
  }
  for (std::size_t r : rows) {
    out.labels.push_back(labels[r]);
    if (!splits.empty()) out.splits.push_back(splits[r]);
  }
  return out;
}

}  // namespace excelformer
