#include "excelformer/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace excelformer {

using nlohmann::json;

// --------------------------------------------------------------------- csv

CsvTable parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t i = 0;
  const auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  const auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };
  while (i < text.size()) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
    } else if (ch == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (ch == ',') {
      end_field();
    } else if (ch == '\n' || ch == '\r') {
      if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_record();
    } else {
      field += ch;
      field_started = true;
    }
    ++i;
  }
  if (quoted) throw DataError("CSV ends inside a quoted field");
  if (field_started || !field.empty() || !record.empty()) end_record();
  if (records.empty()) throw DataError("CSV has no header row");

  CsvTable table;
  table.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size()) {
      throw DataError("CSV row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                      " fields, header has " + std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str());
}

namespace {

std::string quote_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_number(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  const char* first = s.data();
  if (*first == '+') ++first;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

std::string format_csv(const CsvTable& table) {
  std::string out;
  const auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out += ',';
      out += quote_field(fields[i]);
    }
    out += '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

TabularDataset to_dataset(const CsvTable& table, const LoadOptions& options) {
  const auto it = std::find(table.header.begin(), table.header.end(), options.target);
  if (it == table.header.end()) {
    std::string cols;
    for (const std::string& h : table.header) cols += (cols.empty() ? "" : ", ") + h;
    throw DataError("target column '" + options.target + "' not found; columns are: " + cols);
  }
  const std::size_t target = static_cast<std::size_t>(it - table.header.begin());
  for (const std::string& c : options.categorical) {
    if (std::find(table.header.begin(), table.header.end(), c) == table.header.end()) {
      throw DataError("--categorical names unknown column '" + c + "'");
    }
  }
  const std::size_t n = table.rows.size();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      if (trim(table.rows[r][c]).empty()) {
        throw DataError("missing value at data row " + std::to_string(r + 1) + ", column '" +
                        table.header[c] + "'");
      }
    }

  TabularDataset data;
  data.task = options.task;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c == target) continue;
    Column col;
    col.name = table.header[c];
    col.categorical = std::find(options.categorical.begin(), options.categorical.end(), col.name) !=
                      options.categorical.end();
    if (!col.categorical) {
      for (std::size_t r = 0; r < n && !col.categorical; ++r) {
        const auto v = parse_number(table.rows[r][c]);
        if (v) col.numeric.push_back(*v);
        else col.categorical = true;
      }
    }
    if (col.categorical) {
      col.numeric.clear();
      for (std::size_t r = 0; r < n; ++r) col.categories.push_back(trim(table.rows[r][c]));
    }
    data.columns.push_back(std::move(col));
  }

  std::vector<std::string> raw_labels;
  for (const auto& row : table.rows) raw_labels.push_back(trim(row[target]));
  if (options.task == Task::regression) {
    data.classes = 1;
    for (std::size_t r = 0; r < n; ++r) {
      const auto v = parse_number(raw_labels[r]);
      if (!v) {
        throw DataError("regression target '" + raw_labels[r] + "' at data row " +
                        std::to_string(r + 1) + " is not a number");
      }
      data.labels.push_back(*v);
    }
  } else {
    std::vector<std::string> names = options.class_names;
    if (names.empty()) {
      const std::set<std::string> unique(raw_labels.begin(), raw_labels.end());
      names.assign(unique.begin(), unique.end());
      const bool numeric = std::all_of(names.begin(), names.end(),
                                       [](const std::string& s) { return parse_number(s).has_value(); });
      if (numeric) {
        std::stable_sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
          return *parse_number(a) < *parse_number(b);
        });
      }
    }
    if (options.task == Task::binary && names.size() != 2) {
      throw DataError("binary task needs exactly 2 label values, found " + std::to_string(names.size()));
    }
    if (options.task == Task::multiclass && names.size() < 2) {
      throw DataError("multiclass task needs at least 2 label values");
    }
    std::map<std::string, std::size_t> index;
    for (std::size_t k = 0; k < names.size(); ++k) index[names[k]] = k;
    for (std::size_t r = 0; r < n; ++r) {
      const auto found = index.find(raw_labels[r]);
      if (found == index.end()) {
        throw DataError("label '" + raw_labels[r] + "' at data row " + std::to_string(r + 1) +
                        " is not one of the model's classes");
      }
      data.labels.push_back(static_cast<double>(found->second));
    }
    data.classes = names.size();
    data.class_names = std::move(names);
  }
  data.validate();
  return data;
}

TabularDataset load_dataset(const std::filesystem::path& path, const LoadOptions& options) {
  return to_dataset(read_csv(path), options);
}

// -------------------------------------------------------------------- json

json to_json(const Tensor& t) {
  std::vector<std::size_t> shape;
  for (std::size_t a = 0; a < t.rank(); ++a) shape.push_back(t.dim(a));
  return json{{"shape", shape}, {"data", t.vec()}};
}

Tensor tensor_from_json(const json& j) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  auto data = j.at("data").get<std::vector<double>>();
  if (shape.size() > Shape::kMaxRank) throw DataError("checkpoint tensor has rank > 3");
  return Tensor(Shape(std::span<const std::size_t>(shape)), std::move(data));
}

json to_json(const ModelConfig& c) {
  return json{{"blocks", c.blocks},
              {"d", c.d},
              {"heads", c.heads},
              {"attn_dropout", c.attn_dropout},
              {"gamma", c.gamma},
              {"task", std::string(to_string(c.task))},
              {"classes", c.classes},
              {"semi_permeable", c.semi_permeable},
              {"attenuated_init", c.attenuated_init}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.blocks = j.at("blocks").get<std::size_t>();
  c.d = j.at("d").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.attn_dropout = j.at("attn_dropout").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.task = parse_task(j.at("task").get<std::string>());
  c.classes = j.at("classes").get<std::size_t>();
  c.semi_permeable = j.at("semi_permeable").get<bool>();
  c.attenuated_init = j.at("attenuated_init").get<bool>();
  return c;
}

json to_json(const FeaturePipeline& p) {
  json features = json::array();
  for (std::size_t j = 0; j < p.feature_names.size(); ++j) {
    json f{{"name", p.feature_names[j]},
           {"categorical", static_cast<bool>(p.categorical[j])},
           {"support", p.quantiles[j].support()},
           {"quantiles", p.quantiles[j].quantiles()}};
    if (p.categorical[j]) {
      json stats = json::object();
      for (const auto& [cat, s] : p.encoders[j].stats()) stats[cat] = {s.sum, s.count};
      f["encoder"] = {{"prior", p.encoders[j].prior()}, {"stats", stats}};
    }
    features.push_back(std::move(f));
  }
  return features;
}

FeaturePipeline pipeline_from_json(const json& j) {
  FeaturePipeline p;
  for (const json& f : j) {
    p.feature_names.push_back(f.at("name").get<std::string>());
    const bool cat = f.at("categorical").get<bool>();
    p.categorical.push_back(cat);
    p.quantiles.emplace_back(f.at("support").get<std::vector<double>>(),
                             f.at("quantiles").get<std::vector<double>>());
    if (cat) {
      std::map<std::string, CategoricalEncoder::Stat> stats;
      for (const auto& [key, v] : f.at("encoder").at("stats").items()) {
        stats[key] = CategoricalEncoder::Stat{v.at(0).get<double>(), v.at(1).get<double>()};
      }
      p.encoders.emplace_back(std::move(stats), f.at("encoder").at("prior").get<double>());
    } else {
      p.encoders.emplace_back();
    }
  }
  return p;
}

json checkpoint_to_json(const Checkpoint& c) {
  const ExcelFormer& m = c.trained.model;
  json params = json::object();
  m.params().visit([&](const std::string& name, const Tensor& t) { params[name] = to_json(t); });
  return json{{"format", "excelformer-checkpoint"},
              {"version", kCheckpointVersion},
              {"config", to_json(m.config())},
              {"target", c.target},
              {"class_names", c.class_names},
              {"importance", m.importance().values},
              {"mask", to_json(m.mask())},
              {"target_scaler", {{"mean", c.trained.scaler.mean}, {"scale", c.trained.scaler.scale}}},
              {"features", to_json(c.pipeline)},
              {"params", params}};
}

Checkpoint checkpoint_from_json(const json& j) {
  if (!j.is_object() || j.value("format", "") != "excelformer-checkpoint") {
    throw DataError("not a model checkpoint");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + j.at("version").dump());
  }
  const ModelConfig config = model_config_from_json(j.at("config"));
  ImportanceVector importance{j.at("importance").get<std::vector<double>>()};
  ModelParams params;
  params.attention.resize(config.blocks);
  params.glu.resize(config.blocks);
  const json& stored = j.at("params");
  params.visit([&](const std::string& name, Tensor& t) {
    if (!stored.contains(name)) throw DataError("checkpoint lacks parameter '" + name + "'");
    t = tensor_from_json(stored.at(name));
  });
  Checkpoint c{TrainedModel{ExcelFormer(config, std::move(importance), std::move(params)),
                            TargetScaler{j.at("target_scaler").at("mean").get<double>(),
                                         j.at("target_scaler").at("scale").get<double>()}},
               pipeline_from_json(j.at("features")), j.at("target").get<std::string>(),
               j.at("class_names").get<std::vector<std::string>>()};
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_text(path, checkpoint_to_json(c).dump() + "\n");
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_json(read_json(path));
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint '" + path.string() + "': " + e.what());
  }
}

}  // namespace excelformer
