#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "mspllar/io.hpp"
#include "mspllar/simulation.hpp"

using namespace mspllar;
using namespace mspllar::io;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mspllar_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string error_of(const std::string& text) {
  try {
    parse_csv(text, CsvSchema{}, "series.csv");
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Csv, ThreeRowIngest) {
  const SeriesBundle b = parse_csv("t,y,x\n1,3,0.5\n2,0,-1.25\n3,7,2\n", CsvSchema{});
  ASSERT_EQ(b.length(), 3);
  EXPECT_EQ(b.y, (std::vector<int>{3, 0, 7}));
  EXPECT_EQ(b.time_index, (std::vector<std::string>{"1", "2", "3"}));
  EXPECT_EQ(b.covariate_names, std::vector<std::string>{"x"});
  EXPECT_EQ(b.covariates(1, 0), -1.25);
  EXPECT_EQ(b.select({"x"}).col(0), b.covariates.col(0));
  EXPECT_THROW(b.column_of("z"), DataError);
}

TEST(Csv, ColumnSelectionAndDates) {
  CsvSchema s;
  s.time_column = "date";
  s.count_column = "failures";
  s.covariate_columns = {"c", "a"};
  const SeriesBundle b = parse_csv("date,a,failures,b,c\n1990-01,1,2,3,4\n1990-02,5,6,7,8\n", s);
  EXPECT_EQ(b.covariate_names, (std::vector<std::string>{"c", "a"}));
  EXPECT_EQ(b.covariates(1, 0), 8.0);
  EXPECT_EQ(b.covariates(1, 1), 5.0);
  EXPECT_EQ(b.y, (std::vector<int>{2, 6}));
}

TEST(Csv, NonIntegerCountNamesLine) {
  const std::string msg = error_of("t,y\n1,3\n2,2.5\n");
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("2.5"), std::string::npos) << msg;
  EXPECT_NE(error_of("t,y\n1,-1\n").find("line 2"), std::string::npos);
}

TEST(Csv, MissingValuesRejected) {
  EXPECT_NE(error_of("t,y,x\n1,3,0.5\n2,4,NA\n").find("missing value in column 'x'"), std::string::npos);
  EXPECT_NE(error_of("t,y\n1,\n").find("missing count"), std::string::npos);
  EXPECT_NE(error_of("t,y,x\n1,3\n").find("expected 3 fields"), std::string::npos);
  EXPECT_NE(error_of("t,z\n1,3\n").find("missing column 'y'"), std::string::npos);
  EXPECT_NE(error_of("").find("missing header"), std::string::npos);
  EXPECT_NE(error_of("t,y\n").find("no data rows"), std::string::npos);
}

TEST(Csv, OrderEnforced) {
  EXPECT_NE(error_of("t,y\n1,3\n1,4\n").find("duplicated or out of order"), std::string::npos);
  EXPECT_NE(error_of("t,y\n2,3\n1,4\n").find("line 3"), std::string::npos);
  EXPECT_EQ(error_of("t,y\n9,3\n10,4\n11,0\n"), "");
  EXPECT_EQ(error_of("t,y\n1999-12,3\n2000-01,4\n"), "");
}

TEST(Csv, SimulatedSeriesRoundTrip) {
  Matrix beta(2, 1);
  beta << 0.2, -0.1;
  ParameterSet p = case1_parameters();
  p.beta = beta;
  std::mt19937_64 gen(17);
  std::normal_distribution<double> n01;
  const int T = 400;
  Matrix X(T, 1);
  for (int t = 0; t < T; ++t) X(t, 0) = n01(gen);
  const SimulationOutput sim = simulate_ms_pllar(p, T, X, 41);

  CsvWriter w({"t", "y", "x"});
  for (int t = 0; t < T; ++t) w.row({std::to_string(t + 1), std::to_string(sim.y[t]), format_number(X(t, 0))});
  const fs::path dir = scratch_dir("roundtrip");
  OutputSet out(dir);
  out.add("series.csv", w.str());
  out.commit();

  const SeriesBundle b = ingest_csv(dir / "series.csv", CsvSchema{});
  EXPECT_EQ(b.y, sim.y);
  EXPECT_EQ(b.covariates, X);
  fs::remove_all(dir);
}

TEST(Transforms, Examples) {
  Vector flat = Vector::Constant(24, 5.0);
  EXPECT_EQ(transform_covariate(flat, TransformKind::yearly_diff, 12), Vector::Zero(12));

  Vector grow(13);
  for (int t = 0; t < 13; ++t) grow(t) = t < 12 ? 100.0 : 110.0;
  const Vector g = transform_covariate(grow, TransformKind::yearly_growth, 12);
  ASSERT_EQ(g.size(), 1);
  EXPECT_NEAR(g(0), 0.10, 1e-15);

  Vector ramp(30);
  for (int t = 0; t < 30; ++t) ramp(t) = t;
  EXPECT_EQ(transform_covariate(ramp, TransformKind::yearly_diff, 12).size(), 18);
  EXPECT_EQ(transform_covariate(ramp, TransformKind::yearly_diff, 12), Vector::Constant(18, 12.0));
}

TEST(Transforms, Errors) {
  Vector zeros = Vector::Zero(14);
  EXPECT_THROW(transform_covariate(zeros, TransformKind::yearly_growth, 12), DataError);
  EXPECT_THROW(transform_covariate(zeros, TransformKind::yearly_diff, 14), DataError);
  EXPECT_THROW(transform_covariate(zeros, TransformKind::yearly_diff, 0), UsageError);
  EXPECT_THROW(parse_transform_kind("log"), UsageError);
  EXPECT_THROW(parse_transform_spec("x:diff"), UsageError);
  EXPECT_THROW(parse_transform_spec("x:diff:0"), UsageError);
}

TEST(Transforms, BundleAlignment) {
  std::string text = "t,y,u,v\n";
  for (int t = 1; t <= 20; ++t) {
    text += std::to_string(t) + "," + std::to_string(t % 4) + "," + std::to_string(t) + "," +
            std::to_string(2 * t) + "\n";
  }
  SeriesBundle b = parse_csv(text, CsvSchema{});
  apply_transforms(b, {parse_transform_spec("u:diff:3"), parse_transform_spec("v:yearly_growth:12")});
  ASSERT_EQ(b.length(), 8);
  EXPECT_EQ(b.time_index.front(), "13");
  EXPECT_EQ(b.y.front(), 13 % 4);
  EXPECT_EQ(b.covariates(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(b.covariates(0, 1), (26.0 - 2.0) / 2.0);
}

TEST(Format, ShortestRoundTrip) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(2.0), "2");
  EXPECT_EQ(format_number(-0.35), "-0.35");
  EXPECT_EQ(format_number(std::nan("")), "nan");
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 5000; ++i) {
    const double x = u(gen) * std::pow(10.0, static_cast<int>(gen() % 40) - 20);
    const std::string s = format_number(x);
    EXPECT_EQ(std::strtod(s.c_str(), nullptr), x) << s;
  }
}

TEST(Format, QuotedFields) {
  CsvWriter w({"a", "b"});
  w.row({"x,y", "say \"hi\""});
  EXPECT_EQ(w.str(), "a,b\n\"x,y\",\"say \"\"hi\"\"\"\n");
  EXPECT_EQ(split_csv_line("\"x,y\",\"say \"\"hi\"\"\""), (std::vector<std::string>{"x,y", "say \"hi\""}));
}

TEST(FitReport, RoundTrip) {
  Matrix beta(2, 1);
  beta << 0.2, -0.123456789012345;
  FitResult fit;
  fit.theta_hat = case1_parameters();
  fit.theta_hat.beta = beta;
  fit.covariate_names = {"baa"};
  fit.names = reported_names(2, fit.covariate_names);
  fit.estimates = reported_values(fit.theta_hat);
  fit.standard_errors = Vector::Constant(fit.estimates.size(), 0.05);
  fit.T = 500;
  FitSummary s{500, 10, -812.5, 1645.0, 1687.1, 3.25};

  const fs::path dir = scratch_dir("report");
  OutputSet out(dir);
  out.add("fit_report.csv", fit_report_csv(fit, s));
  out.commit();
  const auto report = read_fit_report(dir / "fit_report.csv");
  EXPECT_EQ(report.at("df"), "490");
  EXPECT_EQ(report.at("m"), "2");

  const auto [p, covs] = parameters_from_report(report);
  EXPECT_EQ(covs, std::vector<std::string>{"baa"});
  EXPECT_EQ(p.d, fit.theta_hat.d);
  EXPECT_EQ(p.a, fit.theta_hat.a);
  EXPECT_EQ(p.b, fit.theta_hat.b);
  EXPECT_EQ(p.beta, fit.theta_hat.beta);
  EXPECT_EQ(p.gamma.matrix(), fit.theta_hat.gamma.matrix());
  fs::remove_all(dir);
}

TEST(FitReport, RejectsOtherFiles) {
  const fs::path dir = scratch_dir("notreport");
  std::ofstream(dir / "x.csv") << "t,y\n1,2\n";
  EXPECT_THROW(read_fit_report(dir / "x.csv"), DataError);
  EXPECT_THROW(parameters_from_report({{"m", "2"}}), DataError);
  fs::remove_all(dir);
}

TEST(OutputSet, NoTemporariesLeft) {
  const fs::path dir = scratch_dir("outputs");
  OutputSet out(dir / "nested");
  out.add("a.csv", "x\n1\n");
  out.add("b.txt", "hello\n");
  const auto written = out.commit();
  EXPECT_EQ(written.size(), 2u);
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir / "nested")) {
    EXPECT_NE(e.path().extension(), ".tmp");
    ++n;
  }
  EXPECT_EQ(n, 2);
  EXPECT_EQ(read_file(dir / "nested" / "b.txt"), "hello\n");
  fs::remove_all(dir);
}
