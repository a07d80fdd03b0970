#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lavpr/retrieval.hpp"

namespace lavpr {

/// Forward-pass cost of a transformer: C = 2 N S (one multiply-accumulate per
/// non-embedding parameter per token, counted as two FLOPs).
struct FlopsEstimate {
  double non_embedding_params = 0.0;
  double sequence_length = 0.0;
  double flops = 0.0;
};

FlopsEstimate estimate_flops(double non_embedding_params, double sequence_length);

/// Shortest round-trip scientific form with a bare exponent: 2.12e9, 1e-3.
std::string format_scientific(double v);

enum class ReportFormat { kCsv, kMarkdown };

ReportFormat parse_report_format(std::string_view s);

/// One row per report: mechanism, dim, then R@K for ascending K. CSV keeps
/// the exact fractions; Markdown prints percentages with one decimal. The
/// best value of each recall column is flagged, with ties going to the first
/// row: a trailing '*' in CSV, bold in Markdown.
/// Throws kEmptyInput for no reports and kInconsistentK for mixed K lists.
std::string emit_report(std::span<const RecallReport> reports, ReportFormat format);

/// Inverse of the CSV form of emit_report; best-value flags are dropped.
std::vector<RecallReport> parse_report_csv(std::string_view csv);

/// RFC 4180 field quoting.
std::string csv_field(std::string_view s);
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace lavpr
