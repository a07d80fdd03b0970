#include <gtest/gtest.h>

#include "lavpr/analysis.hpp"

namespace lavpr {
namespace {

RecallReport report(std::string name, std::size_t dim, std::vector<double> recall) {
  RecallReport r;
  r.mechanism = std::move(name);
  r.dim = dim;
  r.ks = {1, 5, 10, 20};
  r.recall = std::move(recall);
  return r;
}

TEST(Flops, ExactProducts) {
  EXPECT_EQ(estimate_flops(1.06e9, 1.0).flops, 2.12e9);
  EXPECT_EQ(estimate_flops(1.06e9, 77.0).flops, 2.0 * 1.06e9 * 77.0);
  EXPECT_EQ(estimate_flops(0.0, 512.0).flops, 0.0);
  try {
    estimate_flops(-1.0, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
  EXPECT_THROW(estimate_flops(1.0, -2.0), Error);
}

TEST(Flops, LinearInBothArguments) {
  for (double n : {1.0, 3.5e6, 7e8}) {
    for (double s : {1.0, 16.0, 77.0}) {
      EXPECT_DOUBLE_EQ(estimate_flops(2 * n, s).flops, 2 * estimate_flops(n, s).flops);
      EXPECT_DOUBLE_EQ(estimate_flops(n, 2 * s).flops, 2 * estimate_flops(n, s).flops);
    }
  }
}

TEST(Flops, ScientificFormatting) {
  EXPECT_EQ(format_scientific(estimate_flops(21200000.0, 50.0).flops), "2.12e9");
  EXPECT_EQ(format_scientific(1e-3), "1e-3");
  EXPECT_EQ(format_scientific(0.0), "0e0");
  EXPECT_EQ(format_scientific(123456.0), "1.23456e5");
  EXPECT_EQ(format_scientific(-2.5e100), "-2.5e100");
}

TEST(Report, CsvFlagsBestPerColumnFirstRowWinsTies) {
  const std::vector<RecallReport> reps{report("vision", 64, {0.5, 0.9, 1.0, 1.0}),
                                       report("ads+llp", 0, {0.75, 0.9, 0.95, 1.0})};
  const auto csv = emit_report(reps, ReportFormat::kCsv);
  EXPECT_EQ(csv,
            "mechanism,dim,R@1,R@5,R@10,R@20\n"
            "vision,64,0.5,0.9*,1*,1*\n"
            "ads+llp,0,0.75*,0.9,0.95,1\n");
}

TEST(Report, MarkdownPercentagesAndBold) {
  const std::vector<RecallReport> reps{report("a|b", 8, {0.123, 0.5, 0.5, 0.5}),
                                       report("c", 8, {0.9996, 0.4, 0.4, 0.4})};
  const auto md = emit_report(reps, ReportFormat::kMarkdown);
  EXPECT_NE(md.find("| a\\|b | 8 | 12.3 | **50.0** |"), std::string::npos) << md;
  EXPECT_NE(md.find("| c | 8 | **100.0** | 40.0 |"), std::string::npos) << md;
}

TEST(Report, CsvRoundTripIsExact) {
  const std::vector<RecallReport> reps{report("x,\"y\"", 3, {1.0 / 3, 2.0 / 3, 0.1, 1.0}),
                                       report("z", 7, {0.2, 0.3, 0.7, 0.9})};
  const auto back = parse_report_csv(emit_report(reps, ReportFormat::kCsv));
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].mechanism, reps[i].mechanism);
    EXPECT_EQ(back[i].dim, reps[i].dim);
    EXPECT_EQ(back[i].ks, reps[i].ks);
    EXPECT_EQ(back[i].recall, reps[i].recall);
  }
}

TEST(Report, Errors) {
  try {
    emit_report({}, ReportFormat::kCsv);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyInput);
  }
  auto other = report("b", 1, {0.1, 0.2});
  other.ks = {1, 5};
  const std::vector<RecallReport> mixed{report("a", 1, {0.1, 0.2, 0.3, 0.4}), other};
  try {
    emit_report(mixed, ReportFormat::kMarkdown);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInconsistentK);
  }
  EXPECT_THROW(parse_report_csv("name,dim\n"), Error);
  EXPECT_THROW(parse_report_csv("mechanism,dim,R@1\nx,1\n"), Error);
}

TEST(ReportFormat, Parse) {
  EXPECT_EQ(parse_report_format("csv"), ReportFormat::kCsv);
  EXPECT_EQ(parse_report_format("md"), ReportFormat::kMarkdown);
  EXPECT_EQ(parse_report_format("markdown"), ReportFormat::kMarkdown);
  EXPECT_THROW(parse_report_format("html"), Error);
}

TEST(Csv, QuotingRoundTrip) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  const auto rows = parse_csv("a,\"b,c\",\"d\"\"e\"\r\n1,2,3\n");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"a", "b,c", "d\"e"}));
  EXPECT_EQ(rows[1], (std::vector<std::string>{"1", "2", "3"}));
}

}  // namespace
}  // namespace lavpr
