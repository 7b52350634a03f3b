#include "provp/table.hpp"

#include <cstdlib>
#include <fstream>

#include "provp/error.hpp"

namespace provp {

namespace {

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\r\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> cells_of(const TableRow& row) {
  const RunCoordinates& c = row.coordinates;
  return {std::string(to_string(c.strategy)),
          c.alpha ? format_fixed(*c.alpha, 2) : std::string(),
          std::string(to_string(c.loss)),
          format_fixed(c.lambda, 2),
          std::to_string(c.length),
          c.layers.to_string(),
          std::to_string(c.shots),
          format_fixed(row.base.mean),
          format_fixed(row.novel.mean),
          format_fixed(row.harmonic.mean),
          std::to_string(row.trainable_params),
          std::to_string(row.seed_count),
          format_fixed(row.base.stddev),
          format_fixed(row.novel.stddev),
          format_fixed(row.harmonic.stddev)};
}

double parse_number(const std::string& text, const std::string& column) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw ParseError("column " + column + ": '" + text + "' is not a number", 0);
  }
  return v;
}

std::size_t parse_count(const std::string& text, const std::string& column) {
  const double v = parse_number(text, column);
  if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
    throw ParseError("column " + column + ": '" + text + "' is not a count", 0);
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

TableFormat parse_table_format(std::string_view text) {
  if (text == "csv") return TableFormat::csv;
  if (text == "markdown" || text == "md") return TableFormat::markdown;
  throw ConfigError("unknown table format '" + std::string(text) + "'");
}

TableRow to_table_row(const AggregateReport& report) {
  return {report.coordinates, report.base, report.novel, report.harmonic, report.trainable_params,
          report.seed_count()};
}

const std::vector<std::string>& table_columns() {
  static const std::vector<std::string> columns = {
      "strategy", "alpha", "loss", "lambda", "m", "layers", "shots", "base", "novel", "H",
      "params", "seed_count", "base_pstd", "novel_pstd", "H_pstd"};
  return columns;
}

std::string emit_table(std::span<const TableRow> rows, TableFormat format) {
  if (rows.empty()) throw EvaluationError("no rows to tabulate");
  std::string out;
  if (format == TableFormat::csv) {
    const auto& columns = table_columns();
    for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "," : "") + csv_field(columns[i]);
    out += "\n";
    for (const TableRow& row : rows) {
      const auto cells = cells_of(row);
      for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + csv_field(cells[i]);
      out += "\n";
    }
    return out;
  }
  out += "| strategy | alpha | loss | lambda | m | layers | shots | Base | Novel | H | params | seeds |\n";
  out += "|---|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const TableRow& row : rows) {
    const auto cells = cells_of(row);
    out += "| " + cells[0] + " | " + (cells[1].empty() ? "-" : cells[1]) + " | " + cells[2] + " | " +
           cells[3] + " | " + cells[4] + " | " + cells[5] + " | " + cells[6] + " | " +
           format_mean_std(row.base) + " | " + format_mean_std(row.novel) + " | " +
           format_mean_std(row.harmonic) + " | " + cells[10] + " | " + cells[11] + " |\n";
  }
  return out;
}

void write_table(const std::filesystem::path& path, std::span<const TableRow> rows, TableFormat format) {
  const std::string text = emit_table(rows, format);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write to " + path.string() + " failed");
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = field_started = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      record.push_back(std::move(field));
      records.push_back(std::move(record));
      record.clear();
      field.clear();
      field_started = false;
    } else if (c == '"') {
      throw ParseError("stray quote inside an unquoted CSV field", i);
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw ParseError("unterminated quoted CSV field", text.size());
  if (field_started || !record.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  return records;
}

std::vector<TableRow> parse_table_csv(std::string_view text) {
  const auto records = parse_csv(text);
  if (records.empty() || records.front() != table_columns()) {
    throw ParseError("CSV header does not match the results table columns", 0);
  }
  const auto& columns = table_columns();
  std::vector<TableRow> rows;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& cells = records[r];
    if (cells.size() != columns.size()) {
      throw ParseError("row " + std::to_string(r) + " has " + std::to_string(cells.size()) + " fields", 0);
    }
    TableRow row;
    RunCoordinates& c = row.coordinates;
    c.strategy = parse_strategy(cells[0]);
    if (!cells[1].empty()) c.alpha = parse_number(cells[1], columns[1]);
    c.loss = parse_loss_mode(cells[2]);
    c.lambda = parse_number(cells[3], columns[3]);
    c.length = parse_count(cells[4], columns[4]);
    c.layers = LayerRange::parse(cells[5]);
    c.shots = parse_count(cells[6], columns[6]);
    row.base.mean = parse_number(cells[7], columns[7]);
    row.novel.mean = parse_number(cells[8], columns[8]);
    row.harmonic.mean = parse_number(cells[9], columns[9]);
    row.trainable_params = parse_count(cells[10], columns[10]);
    row.seed_count = parse_count(cells[11], columns[11]);
    row.base.stddev = parse_number(cells[12], columns[12]);
    row.novel.stddev = parse_number(cells[13], columns[13]);
    row.harmonic.stddev = parse_number(cells[14], columns[14]);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace provp
