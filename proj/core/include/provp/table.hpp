#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "provp/metrics.hpp"

namespace provp {

enum class TableFormat { csv, markdown };

TableFormat parse_table_format(std::string_view text);

/// One results row. Accuracy columns carry the seed mean; the *_pstd
/// columns the population standard deviation.
struct TableRow {
  RunCoordinates coordinates;
  MeanStd base;
  MeanStd novel;
  MeanStd harmonic;
  std::size_t trainable_params = 0;
  std::size_t seed_count = 0;
};

TableRow to_table_row(const AggregateReport& report);

/// Column order, fixed:
///   strategy, alpha, loss, lambda, m, layers, shots, base, novel, H,
///   params, seed_count, base_pstd, novel_pstd, H_pstd
const std::vector<std::string>& table_columns();

/// CSV quotes fields RFC-4180 style; markdown shows "mean ± pstd" cells.
/// Numbers are printed with two decimals. Throws EvaluationError if empty.
std::string emit_table(std::span<const TableRow> rows, TableFormat format);
void write_table(const std::filesystem::path& path, std::span<const TableRow> rows, TableFormat format);

/// Splits CSV text into records, honoring quotes and doubled quotes.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

/// Inverse of emit_table(.., csv) at the printed precision.
std::vector<TableRow> parse_table_csv(std::string_view text);

}  // namespace provp
