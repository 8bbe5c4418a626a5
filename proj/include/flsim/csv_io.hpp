#pragma once

#include <string>
#include <vector>

#include "flsim/data.hpp"

namespace flsim {

// Column layout for the generic CSV path. Serialized as JSON:
// {window_len, modalities:[{id, channels, columns:[...]}], label_column,
//  client_column}.
struct CsvSchema {
  std::size_t window_len = 0;
  struct Modality {
    std::size_t id = 0;
    std::size_t channels = 0;
    std::vector<std::string> columns;
  };
  std::vector<Modality> modalities;
  std::string label_column = "label";
  std::string client_column = "client_id";

  void validate() const;
  ModalityLayout layout() const;

  static CsvSchema load(const std::string& path);
  void save(const std::string& path) const;
  std::string to_json_string() const;
  static CsvSchema from_json_string(const std::string& text);
};

// Schema matching a generated population (columns named m<id>_c<ch>).
CsvSchema default_schema(const std::vector<ModalitySpec>& modalities, std::size_t window_len);

// Reads windowed samples grouped by client. Modality columns that are absent
// from the header, or empty for a whole window, yield a zero block with
// present_mask false. Mixed empty/non-empty cells inside one window are
// malformed. Link speeds are not part of the schema; ingested clients get
// fixed defaults (5 Mbps up / 20 Mbps down).
std::vector<ClientProfile> ingest_csv(const std::string& path, const CsvSchema& schema);

// Inverse of ingest_csv for generated populations; absent modalities write
// empty cells. Values use 17 significant digits and round-trip exactly.
void export_csv(const std::vector<ClientProfile>& clients, const CsvSchema& schema,
                const std::string& path);

}  // namespace flsim
