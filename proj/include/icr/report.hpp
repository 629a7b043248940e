#pragma once

// Report schema shared by every experiment:
//   {"run_id": str, "config": {...}, "tables": {name: {"rows", "cols", "values"}}}
// Each table can also be written as CSV with a leading "row" label column.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icr/icr_score.hpp"
#include "icr/matrix.hpp"

namespace icr {

struct Table {
    std::string name;
    std::vector<std::string> rows;
    std::vector<std::string> cols;
    Matrix values;  // rows x cols

    bool operator==(const Table&) const = default;
};

struct Report {
    std::string run_id;
    nlohmann::json config = nlohmann::json::object();
    std::map<std::string, Table> tables;

    void add(Table table);
    bool operator==(const Report&) const = default;
};

nlohmann::json to_json(const Report& report);
Report report_from_json(const nlohmann::json& j);

/// Header "row,<cols>" then one line per row.
std::string table_csv(const Table& table);

struct ReportFormats {
    bool json = true;
    bool csv = true;
};

ReportFormats parse_formats(const std::string& list);

/// Writes report.json and/or <table>.csv under `dir`; returns the files written.
std::vector<std::filesystem::path> emit_report(const Report& report, const std::filesystem::path& dir,
                                               ReportFormats formats);

/// Shortest decimal text that parses back to the same double.
std::string format_number(double v);

// --- feature / label / matrix CSV files ---------------------------------------

/// Header layer_1..layer_L, one row per example.
void write_features_csv(const std::filesystem::path& path, const Matrix& features);
Matrix read_features_csv(const std::filesystem::path& path);

/// Header "example_id,label".
void write_labels_csv(const std::filesystem::path& path, std::span<const std::string> ids,
                      std::span<const int> labels);
/// Reads the "label" column (ids optional).
std::vector<int> read_labels_csv(const std::filesystem::path& path,
                                 std::vector<std::string>* ids = nullptr);

/// One row per token, header layer_1..layer_L.
void write_matrix_csv(const std::filesystem::path& path, const IcrMatrix& matrix);

}  // namespace icr
