#include "lavpr/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

namespace lavpr {

FlopsEstimate estimate_flops(double non_embedding_params, double sequence_length) {
  if (!(non_embedding_params >= 0.0) || !(sequence_length >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "flops: arguments must be non-negative");
  }
  return {non_embedding_params, sequence_length,
          2.0 * non_embedding_params * sequence_length};
}

std::string format_scientific(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::scientific);
  std::string s(buf, res.ptr);
  const auto e = s.find('e');
  if (e == std::string::npos) return s;  // inf / nan
  std::string exp = s.substr(e + 1);
  const bool negative = exp.front() == '-';
  if (exp.front() == '+' || exp.front() == '-') exp.erase(0, 1);
  exp.erase(0, std::min(exp.find_first_not_of('0'), exp.size() - 1));
  return s.substr(0, e) + "e" + (negative ? "-" : "") + exp;
}

ReportFormat parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::kCsv;
  if (s == "markdown" || s == "md") return ReportFormat::kMarkdown;
  throw Error(ErrorCode::kInvalidArgument, "unknown report format '" + std::string(s) + "'");
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
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
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw Error(ErrorCode::kBadMetadata, "csv: unterminated quoted field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * v);
  return buf;
}

std::string markdown_cell(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += '\\';
    out += c;
  }
  return out;
}

// Row index holding the maximum of each recall column; first row wins ties.
std::vector<std::size_t> best_rows(std::span<const RecallReport> reports) {
  std::vector<std::size_t> best(reports.front().ks.size(), 0);
  for (std::size_t c = 0; c < best.size(); ++c) {
    for (std::size_t r = 1; r < reports.size(); ++r) {
      if (reports[r].recall[c] > reports[best[c]].recall[c]) best[c] = r;
    }
  }
  return best;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kBadMetadata, "csv: bad number '" + s + "'");
  }
  return v;
}

std::size_t parse_size(const std::string& s) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kBadMetadata, "csv: bad integer '" + s + "'");
  }
  return v;
}

}  // namespace

std::string emit_report(std::span<const RecallReport> reports, ReportFormat format) {
  if (reports.empty()) throw Error(ErrorCode::kEmptyInput, "no reports to emit");
  const auto& ks = reports.front().ks;
  for (const auto& r : reports) {
    if (r.ks != ks) throw Error(ErrorCode::kInconsistentK, "reports disagree on the K list");
    if (r.recall.size() != ks.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "report recall count does not match K list");
    }
  }
  const auto best = best_rows(reports);
  std::ostringstream out;
  if (format == ReportFormat::kCsv) {
    out << "mechanism,dim";
    for (auto k : ks) out << ",R@" << k;
    out << '\n';
    for (std::size_t r = 0; r < reports.size(); ++r) {
      out << csv_field(reports[r].mechanism) << ',' << reports[r].dim;
      for (std::size_t c = 0; c < ks.size(); ++c) {
        out << ',' << shortest(reports[r].recall[c]) << (best[c] == r ? "*" : "");
      }
      out << '\n';
    }
  } else {
    out << "| mechanism | dim |";
    for (auto k : ks) out << " R@" << k << " |";
    out << "\n|---|---:|";
    for (std::size_t c = 0; c < ks.size(); ++c) out << "---:|";
    out << '\n';
    for (std::size_t r = 0; r < reports.size(); ++r) {
      out << "| " << markdown_cell(reports[r].mechanism) << " | " << reports[r].dim << " |";
      for (std::size_t c = 0; c < ks.size(); ++c) {
        const std::string v = percent(reports[r].recall[c]);
        out << ' ' << (best[c] == r ? "**" + v + "**" : v) << " |";
      }
      out << '\n';
    }
  }
  return out.str();
}

std::vector<RecallReport> parse_report_csv(std::string_view csv) {
  const auto rows = parse_csv(csv);
  if (rows.empty()) throw Error(ErrorCode::kBadMetadata, "csv: missing header");
  const auto& header = rows.front();
  if (header.size() < 2 || header[0] != "mechanism" || header[1] != "dim") {
    throw Error(ErrorCode::kBadMetadata, "csv: unexpected header");
  }
  std::vector<std::size_t> ks;
  for (std::size_t c = 2; c < header.size(); ++c) {
    if (header[c].rfind("R@", 0) != 0) throw Error(ErrorCode::kBadMetadata, "csv: bad column");
    ks.push_back(parse_size(header[c].substr(2)));
  }
  std::vector<RecallReport> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != header.size()) {
      throw Error(ErrorCode::kBadMetadata, "csv: row " + std::to_string(r) + " has wrong width");
    }
    RecallReport rep;
    rep.mechanism = row[0];
    rep.dim = parse_size(row[1]);
    rep.ks = ks;
    for (std::size_t c = 2; c < row.size(); ++c) {
      std::string v = row[c];
      if (!v.empty() && v.back() == '*') v.pop_back();
      rep.recall.push_back(parse_double(v));
    }
    out.push_back(std::move(rep));
  }
  return out;
}

}  // namespace lavpr
