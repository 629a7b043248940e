#include "icr/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace icr {

void Report::add(Table table) {
    if (table.rows.empty() && table.values.empty()) table.values = Matrix(0, table.cols.size());
    if (table.values.rows() != table.rows.size() || table.values.cols() != table.cols.size()) {
        throw std::invalid_argument("report table " + table.name + ": values do not match row/column labels");
    }
    auto name = table.name;
    tables.insert_or_assign(std::move(name), std::move(table));
}

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

nlohmann::json to_json(const Report& report) {
    nlohmann::json tables = nlohmann::json::object();
    for (const auto& [name, t] : report.tables) {
        nlohmann::json values = nlohmann::json::array();
        for (std::size_t r = 0; r < t.values.rows(); ++r) {
            const auto row = t.values.row(r);
            values.push_back(std::vector<double>(row.begin(), row.end()));
        }
        tables[name] = {{"rows", t.rows}, {"cols", t.cols}, {"values", values}};
    }
    return {{"run_id", report.run_id}, {"config", report.config}, {"tables", tables}};
}

Report report_from_json(const nlohmann::json& j) {
    Report report;
    report.run_id = j.at("run_id").get<std::string>();
    report.config = j.at("config");
    for (const auto& [name, t] : j.at("tables").items()) {
        Table table;
        table.name = name;
        table.rows = t.at("rows").get<std::vector<std::string>>();
        table.cols = t.at("cols").get<std::vector<std::string>>();
        table.values = Matrix(table.rows.size(), table.cols.size());
        const auto& values = t.at("values");
        if (values.size() != table.rows.size()) throw std::runtime_error("report table " + name + ": row count mismatch");
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            const auto row = values.at(r).get<std::vector<double>>();
            if (row.size() != table.cols.size()) throw std::runtime_error("report table " + name + ": column count mismatch");
            std::copy(row.begin(), row.end(), table.values.row(r).begin());
        }
        report.tables.emplace(name, std::move(table));
    }
    return report;
}

std::string table_csv(const Table& t) {
    std::ostringstream os;
    os << "row";
    for (const auto& c : t.cols) os << ',' << c;
    os << '\n';
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        os << t.rows[r];
        for (std::size_t c = 0; c < t.cols.size(); ++c) os << ',' << format_number(t.values(r, c));
        os << '\n';
    }
    return os.str();
}

ReportFormats parse_formats(const std::string& list) {
    ReportFormats f{false, false};
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "json") f.json = true;
        else if (item == "csv") f.csv = true;
        else throw std::invalid_argument("unknown report format '" + item + "'");
    }
    if (!f.json && !f.csv) throw std::invalid_argument("no report format selected");
    return f;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw std::runtime_error(path.string() + ": cannot parse number '" + s + "'");
    }
    return v;
}

std::string layer_header(std::size_t n) {
    std::string h;
    for (std::size_t l = 1; l <= n; ++l) h += (l > 1 ? ",layer_" : "layer_") + std::to_string(l);
    return h;
}

void write_rows(std::ostream& os, const Matrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) os << (c ? "," : "") << format_number(m(r, c));
        os << '\n';
    }
}

}  // namespace

std::vector<std::filesystem::path> emit_report(const Report& report, const std::filesystem::path& dir,
                                               ReportFormats formats) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    if (formats.json) {
        const auto path = dir / "report.json";
        write_text(path, to_json(report).dump(2) + "\n");
        written.push_back(path);
    }
    if (formats.csv) {
        for (const auto& [name, table] : report.tables) {
            const auto path = dir / (name + ".csv");
            write_text(path, table_csv(table));
            written.push_back(path);
        }
    }
    return written;
}

void write_features_csv(const std::filesystem::path& path, const Matrix& features) {
    std::ostringstream os;
    os << layer_header(features.cols()) << '\n';
    write_rows(os, features);
    write_text(path, os.str());
}

Matrix read_features_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty feature file");
    const auto header = split_csv_line(line);
    if (header.empty()) throw std::runtime_error(path.string() + ": empty header");
    std::vector<double> data;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw std::runtime_error(path.string() + ": row " + std::to_string(rows + 1) + " has " +
                                     std::to_string(cells.size()) + " cells, expected " +
                                     std::to_string(header.size()));
        }
        for (const auto& c : cells) data.push_back(parse_double(c, path));
        ++rows;
    }
    return Matrix(rows, header.size(), std::move(data));
}

void write_labels_csv(const std::filesystem::path& path, std::span<const std::string> ids,
                      std::span<const int> labels) {
    if (ids.size() != labels.size()) throw std::invalid_argument("id and label counts differ");
    std::ostringstream os;
    os << "example_id,label\n";
    for (std::size_t i = 0; i < labels.size(); ++i) os << ids[i] << ',' << labels[i] << '\n';
    write_text(path, os.str());
}

std::vector<int> read_labels_csv(const std::filesystem::path& path, std::vector<std::string>* ids) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty label file");
    const auto header = split_csv_line(line);
    std::size_t label_col = header.size(), id_col = header.size();
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "label") label_col = c;
        if (header[c] == "example_id") id_col = c;
    }
    if (label_col == header.size()) throw std::runtime_error(path.string() + ": no 'label' column");
    std::vector<int> labels;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) throw std::runtime_error(path.string() + ": ragged row");
        const auto& cell = cells[label_col];
        if (cell != "0" && cell != "1") throw std::runtime_error(path.string() + ": label must be 0 or 1");
        labels.push_back(cell == "1" ? 1 : 0);
        if (ids && id_col < cells.size()) ids->push_back(cells[id_col]);
    }
    return labels;
}

void write_matrix_csv(const std::filesystem::path& path, const IcrMatrix& matrix) {
    std::ostringstream os;
    os << layer_header(matrix.n_layers()) << '\n';
    write_rows(os, matrix.scores);
    write_text(path, os.str());
}

}  // namespace icr
