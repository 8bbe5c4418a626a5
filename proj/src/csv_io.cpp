#include "flsim/csv_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace flsim {

void CsvSchema::validate() const {
  if (window_len < 1) throw ConfigError("schema.window_len: must be >= 1");
  if (modalities.size() < 2) throw ConfigError("schema.modalities: at least 2 modalities required");
  for (std::size_t i = 0; i < modalities.size(); ++i) {
    const auto& m = modalities[i];
    if (m.columns.size() != m.channels) {
      throw ConfigError("schema.modalities[" + std::to_string(i) +
                        "]: columns list must match channel count");
    }
  }
  if (label_column.empty() || client_column.empty()) {
    throw ConfigError("schema: label_column and client_column must be named");
  }
}

ModalityLayout CsvSchema::layout() const {
  std::vector<ModalitySpec> specs;
  specs.reserve(modalities.size());
  for (const auto& m : modalities) {
    ModalitySpec s;
    s.modality_id = m.id;
    s.channels = m.channels;
    specs.push_back(s);
  }
  return ModalityLayout::from_specs(specs);
}

std::string CsvSchema::to_json_string() const {
  nlohmann::json j;
  j["window_len"] = window_len;
  j["label_column"] = label_column;
  j["client_column"] = client_column;
  j["modalities"] = nlohmann::json::array();
  for (const auto& m : modalities) {
    j["modalities"].push_back({{"id", m.id}, {"channels", m.channels}, {"columns", m.columns}});
  }
  return j.dump(2);
}

CsvSchema CsvSchema::from_json_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema: invalid JSON: ") + e.what());
  }
  CsvSchema s;
  try {
    s.window_len = j.at("window_len").get<std::size_t>();
    s.label_column = j.value("label_column", std::string("label"));
    s.client_column = j.value("client_column", std::string("client_id"));
    for (const auto& jm : j.at("modalities")) {
      Modality m;
      m.id = jm.at("id").get<std::size_t>();
      m.channels = jm.at("channels").get<std::size_t>();
      m.columns = jm.at("columns").get<std::vector<std::string>>();
      s.modalities.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema: missing or mistyped field: ") + e.what());
  }
  s.validate();
  return s;
}

CsvSchema CsvSchema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("schema: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_string(buf.str());
}

void CsvSchema::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("schema: cannot write " + path);
  out << to_json_string() << "\n";
}

CsvSchema default_schema(const std::vector<ModalitySpec>& modalities, std::size_t window_len) {
  CsvSchema s;
  s.window_len = window_len;
  for (const auto& m : modalities) {
    CsvSchema::Modality sm;
    sm.id = m.modality_id;
    sm.channels = m.channels;
    for (std::size_t c = 0; c < m.channels; ++c) {
      sm.columns.push_back("m" + std::to_string(m.modality_id) + "_c" + std::to_string(c));
    }
    s.modalities.push_back(std::move(sm));
  }
  s.validate();
  return s;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& text, std::size_t line_no) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw IoError("csv: line " + std::to_string(line_no) + ": bad numeric value '" + text + "'");
  }
  return value;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<ClientProfile> ingest_csv(const std::string& path, const CsvSchema& schema) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw IoError("csv: cannot open " + path);

  std::string header_line;
  if (!std::getline(in, header_line)) throw IoError("csv: empty file " + path);
  const std::vector<std::string> header = split_csv_line(header_line);

  std::map<std::string, std::size_t> col_index;
  for (std::size_t i = 0; i < header.size(); ++i) col_index[header[i]] = i;

  auto find_col = [&](const std::string& name) -> std::ptrdiff_t {
    auto it = col_index.find(name);
    return it == col_index.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
  };

  const std::ptrdiff_t client_col = find_col(schema.client_column);
  const std::ptrdiff_t label_col = find_col(schema.label_column);
  if (client_col < 0) throw IoError("csv: missing column '" + schema.client_column + "'");
  if (label_col < 0) throw IoError("csv: missing column '" + schema.label_column + "'");

  const ModalityLayout layout = schema.layout();
  // Per modality, per channel: column index or -1 when absent from the file.
  std::vector<std::vector<std::ptrdiff_t>> mod_cols(schema.modalities.size());
  for (const auto& m : schema.modalities) {
    auto& cols = mod_cols[m.id];
    cols.resize(m.channels);
    for (std::size_t c = 0; c < m.channels; ++c) cols[c] = find_col(m.columns[c]);
  }

  struct PendingRow {
    std::vector<std::string> fields;
    std::size_t line_no;
  };
  std::map<std::size_t, std::vector<PendingRow>> rows_by_client;  // ordered by id

  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw IoError("csv: line " + std::to_string(line_no) + ": expected " +
                    std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    const std::size_t client_id =
        static_cast<std::size_t>(parse_double(fields[static_cast<std::size_t>(client_col)], line_no));
    rows_by_client[client_id].push_back({std::move(fields), line_no});
  }
  if (rows_by_client.empty()) throw IoError("csv: no data rows in " + path);

  std::vector<ClientProfile> clients;
  for (auto& [client_id, rows] : rows_by_client) {
    if (rows.size() % schema.window_len != 0) {
      throw IoError("csv: client " + std::to_string(client_id) + " has " +
                    std::to_string(rows.size()) + " rows, not a multiple of window_len " +
                    std::to_string(schema.window_len));
    }
    ClientProfile client;
    client.client_id = client_id;
    client.upload_bps = 5e6;
    client.download_bps = 20e6;

    std::vector<bool> seen_any(layout.num_modalities(), false);
    const std::size_t num_samples = rows.size() / schema.window_len;
    for (std::size_t s = 0; s < num_samples; ++s) {
      MultimodalSample sample;
      sample.data = DenseArray({layout.total_channels, schema.window_len});
      sample.present_mask.assign(layout.num_modalities(), false);

      const PendingRow& first = rows[s * schema.window_len];
      const double label_val = parse_double(
          first.fields[static_cast<std::size_t>(label_col)], first.line_no);
      sample.label = static_cast<int>(label_val);

      for (std::size_t m = 0; m < layout.num_modalities(); ++m) {
        std::size_t empty_cells = 0, filled_cells = 0;
        for (std::size_t c = 0; c < layout.channels[m]; ++c) {
          const std::ptrdiff_t col = mod_cols[m][c];
          for (std::size_t t = 0; t < schema.window_len; ++t) {
            const PendingRow& row = rows[s * schema.window_len + t];
            if (col < 0 || row.fields[static_cast<std::size_t>(col)].empty()) {
              ++empty_cells;
              continue;
            }
            sample.data.at2(layout.offsets[m] + c, t) =
                parse_double(row.fields[static_cast<std::size_t>(col)], row.line_no);
            ++filled_cells;
          }
        }
        if (filled_cells > 0 && empty_cells > 0) {
          throw IoError("csv: client " + std::to_string(client_id) + " sample " +
                        std::to_string(s) + ": modality " + std::to_string(m) +
                        " is partially filled");
        }
        sample.present_mask[m] = filled_cells > 0;
        if (sample.present_mask[m]) seen_any[m] = true;
      }
      client.dataset.push_back(std::move(sample));
    }
    if (client.dataset.empty()) {
      throw IoError("csv: client " + std::to_string(client_id) + " has no samples");
    }
    for (std::size_t m = 0; m < layout.num_modalities(); ++m) {
      if (seen_any[m]) client.available_modalities.push_back(m);
    }
    if (client.available_modalities.empty()) {
      throw IoError("csv: client " + std::to_string(client_id) + " has no modalities at all");
    }
    clients.push_back(std::move(client));
  }
  return clients;
}

void export_csv(const std::vector<ClientProfile>& clients, const CsvSchema& schema,
                const std::string& path) {
  schema.validate();
  const ModalityLayout layout = schema.layout();
  std::ofstream out(path);
  if (!out) throw IoError("csv: cannot write " + path);

  out << schema.client_column << "," << schema.label_column;
  for (const auto& m : schema.modalities) {
    for (const auto& col : m.columns) out << "," << col;
  }
  out << "\n";

  for (const auto& client : clients) {
    for (const auto& sample : client.dataset) {
      for (std::size_t t = 0; t < schema.window_len; ++t) {
        out << client.client_id << "," << sample.label;
        for (const auto& m : schema.modalities) {
          for (std::size_t c = 0; c < m.channels; ++c) {
            out << ",";
            if (sample.present_mask[m.id]) {
              out << format_double(sample.data.at2(layout.offsets[m.id] + c, t));
            }
          }
        }
        out << "\n";
      }
    }
  }
}

}  // namespace flsim
