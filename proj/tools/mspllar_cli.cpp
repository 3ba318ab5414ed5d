// Command-line front end: simulate, fit, predict, diagnose, mc-study.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
// Failures print one line on stderr:
//   error code=<n> kind=<usage|data|numerical> message="<text>"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mspllar/mspllar.hpp"

namespace fs = std::filesystem;
using namespace mspllar;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

int report_error(int code, const std::string& kind, std::string message) {
  for (char& c : message) {
    if (c == '\n' || c == '\r') c = ' ';
    if (c == '"') c = '\'';
  }
  std::cerr << "error code=" << code << " kind=" << kind << " message=\"" << message << "\"\n";
  return code;
}

// ---------------------------------------------------------------------------
// Options shared by the data-driven commands.

struct DataArgs {
  std::string input;
  std::string time_col = "t";
  std::string count_col = "y";
  std::vector<std::string> transforms;
};

void add_data_options(CLI::App* cmd, DataArgs& args) {
  cmd->add_option("--input", args.input, "CSV with a header row")->required();
  cmd->add_option("--time-col", args.time_col, "time label column");
  cmd->add_option("--count-col", args.count_col, "count column");
  cmd->add_option("--transform", args.transforms, "column:yearly_growth|yearly_diff:period (repeatable)")
      ->delimiter(';');
}

io::SeriesBundle load_bundle(const DataArgs& args, const std::vector<std::string>& covariates) {
  io::CsvSchema schema;
  schema.time_column = args.time_col;
  schema.count_column = args.count_col;
  std::vector<io::TransformSpec> specs;
  std::vector<std::string> columns = covariates;
  for (const auto& t : args.transforms) {
    specs.push_back(io::parse_transform_spec(t));
    if (std::find(columns.begin(), columns.end(), specs.back().column) == columns.end()) {
      columns.push_back(specs.back().column);
    }
  }
  schema.covariate_columns = columns;
  schema.all_remaining_covariates = false;
  io::SeriesBundle bundle = io::ingest_csv(args.input, schema);
  io::apply_transforms(bundle, specs);
  return bundle;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = io::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Covariate-only CSV (no count column): a dummy count column is appended so
// the regular ingestion checks apply.
io::SeriesBundle read_covariate_file(const std::string& path, const std::string& time_col,
                                     const std::vector<std::string>& covariates) {
  std::istringstream in(io::read_file(path));
  std::ostringstream with_counts;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (io::trim(line).empty()) continue;
    with_counts << line << "," << (header ? "__count__" : "0") << "\n";
    header = false;
  }
  io::CsvSchema schema;
  schema.time_column = time_col;
  schema.count_column = "__count__";
  schema.covariate_columns = covariates;
  schema.all_remaining_covariates = false;
  return io::parse_csv(with_counts.str(), schema, path);
}

// ---------------------------------------------------------------------------
// Shared output writers.

std::string state_probs_csv(const std::vector<StateProbabilities>& sets) {
  io::CsvWriter w({"t", "kind", "state", "probability"});
  for (const auto& sp : sets) {
    for (Eigen::Index t = 0; t < sp.probs.rows(); ++t) {
      for (Eigen::Index j = 0; j < sp.probs.cols(); ++j) {
        w.row({std::to_string(t + 1), to_string(sp.kind), std::to_string(j + 1),
               io::format_number(sp.probs(t, j))});
      }
    }
  }
  return w.str();
}

struct Analysis {
  FilterTrace trace;
  ExpandedChain chain;
  Matrix smoothing;
  PredictionSeries one_step;
  PredictionSeries smoothed;
  DiagnosticsReport diag;
  int p = 0;
};

Analysis analyse(const ParameterSet& theta, const std::vector<int>& y, const Matrix& X,
                 const FilterOptions& filter, std::optional<int> p_override, int max_lag) {
  Analysis a;
  a.chain = build_expanded_chain(theta.gamma);
  a.trace = quasi_log_likelihood(theta, y, X, filter);
  if (!a.trace.feasible) {
    throw NumericalError("parameters are infeasible for this series: " +
                         (a.trace.warnings.empty() ? std::string("-") : a.trace.warnings.back()));
  }
  a.smoothing = kim_smoother(a.trace, a.chain);
  a.one_step = predict_one_step(a.trace);
  a.smoothed = predict_smoothed_insample(a.trace, a.smoothing);
  a.p = p_override ? *p_override : count_free_parameters(theta.regimes(), theta.covariates());
  a.diag = diagnostics(y, a.smoothed, a.trace.qll, a.p, max_lag);
  return a;
}

std::string fit_summary_text(const FitResult& fit, const Analysis& a, const std::vector<std::string>& covs) {
  std::ostringstream out;
  out << "MS Poisson log-linear autoregressive fit\n";
  out << "regimes m = " << fit.regimes() << ", covariates r = " << covs.size();
  if (!covs.empty()) {
    out << " (";
    for (std::size_t i = 0; i < covs.size(); ++i) out << (i ? ", " : "") << covs[i];
    out << ")";
  }
  out << "\nT = " << fit.T << ", p = " << a.p << ", df = " << fit.T - a.p << "\n";
  out << "quasi-log-likelihood = " << io::format_number(fit.qll) << "\n";
  out << "AIC = " << io::format_number(a.diag.aic) << ", BIC = " << io::format_number(a.diag.bic)
      << ", MSE = " << io::format_number(a.diag.residual_mse) << "\n";
  out << "status = " << to_string(fit.convergence.status) << " after " << fit.convergence.iterations
      << " iterations (gradient max-norm " << io::format_number(fit.convergence.gradient_norm) << ")\n\n";
  out << "parameter            estimate           se        z\n";
  for (std::size_t i = 0; i < fit.names.size(); ++i) {
    char line[160];
    const double se = fit.standard_errors(i);
    std::snprintf(line, sizeof line, "%-18s %12.6f %12.6f %8.3f\n", fit.names[i].c_str(), fit.estimates(i), se,
                  se > 0 ? fit.estimates(i) / se : std::nan(""));
    out << line;
  }
  if (fit.restarts.size() > 1) {
    out << "\nstarts:\n";
    for (const auto& s : fit.restarts) {
      out << "  " << s.index << ": qll = " << io::format_number(s.qll) << ", " << to_string(s.status)
          << (s.error.empty() ? "" : ", " + s.error) << "\n";
    }
  }
  for (const auto& w : fit.warnings) out << "warning: " << w << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Commands.

struct SimulateArgs {
  std::optional<int> case_id;
  std::string params;
  int T = 0;
  std::optional<std::uint64_t> seed;
  int burn_in = 100;
  std::string covariate_input;
  std::string time_col = "t";
  std::string out;
};

void run_simulate(const SimulateArgs& args) {
  if (!args.seed) throw UsageError("simulate requires --seed");
  if (args.case_id.has_value() == !args.params.empty()) {
    throw UsageError("simulate needs exactly one of --case or --params");
  }
  ParameterSet theta;
  std::vector<std::string> covs;
  if (args.case_id) {
    theta = case_parameters(*args.case_id);
  } else {
    std::tie(theta, covs) = io::parameters_from_report(io::read_fit_report(args.params));
  }
  Matrix X;
  std::vector<std::string> labels;
  if (!covs.empty()) {
    if (args.covariate_input.empty()) throw UsageError("parameters have covariates; supply --covariates-input");
    const io::SeriesBundle b = read_covariate_file(args.covariate_input, args.time_col, covs);
    if (b.length() < args.T) throw DataError("covariate file has fewer than T rows");
    X = b.covariates.topRows(args.T);
    labels.assign(b.time_index.begin(), b.time_index.begin() + args.T);
  }
  SimulationOptions opt;
  opt.burn_in = args.burn_in;
  const SimulationOutput sim = simulate_ms_pllar(theta, args.T, X, *args.seed, opt);

  std::vector<std::string> header{"t", "y", "state", "eta"};
  for (const auto& c : covs) header.push_back(c);
  io::CsvWriter w(header);
  for (int t = 0; t < args.T; ++t) {
    std::vector<std::string> row{labels.empty() ? std::to_string(t + 1) : labels[t], std::to_string(sim.y[t]),
                                 std::to_string(sim.states[t] + 1), io::format_number(sim.eta(t))};
    for (Eigen::Index c = 0; c < X.cols(); ++c) row.push_back(io::format_number(X(t, c)));
    w.row(row);
  }
  io::OutputSet out(args.out);
  out.add("series.csv", w.str());
  out.commit();
}

struct FitArgs {
  DataArgs data;
  int m = 0;
  std::string covariates;
  int starts = 1;
  std::uint64_t seed = 0;
  double dispersion = 0.5;
  std::string init;
  std::optional<int> p_override;
  bool raw_count_feedback = false;
  int max_iter = 500;
  std::string out;
};

void run_fit(const FitArgs& args) {
  if (args.m < 1) throw UsageError("--m must be at least 1");
  const std::vector<std::string> covs = split_list(args.covariates);
  const io::SeriesBundle bundle = load_bundle(args.data, covs);
  const Matrix X = bundle.select(covs);
  const int r = static_cast<int>(covs.size());

  ParameterSet center;
  if (!args.init.empty()) {
    auto [p, init_covs] = io::parameters_from_report(io::read_fit_report(args.init));
    if (p.regimes() != args.m || init_covs.size() != covs.size()) {
      throw UsageError("--init report does not match --m / --covariates");
    }
    // Reorder beta columns to the requested covariate order.
    Matrix beta(args.m, r);
    for (int c = 0; c < r; ++c) {
      const auto it = std::find(init_covs.begin(), init_covs.end(), covs[c]);
      if (it == init_covs.end()) throw UsageError("--init report lacks covariate " + covs[c]);
      beta.col(c) = p.beta.col(it - init_covs.begin());
    }
    p.beta = beta;
    center = p;
  } else {
    center = heuristic_start(bundle.y, args.m, r);
  }

  FitOptions options;
  options.filter.raw_count_feedback = args.raw_count_feedback;
  options.optimizer.max_iterations = args.max_iter;
  const FitResult fit = multi_start(bundle.y, X, center, args.starts, args.seed, args.dispersion, options, covs);
  const Analysis a = analyse(fit.theta_hat, bundle.y, X, options.filter, args.p_override, -1);

  io::FitSummary s{fit.T, a.p, fit.qll, a.diag.aic, a.diag.bic, a.diag.residual_mse};
  io::OutputSet out(args.out);
  out.add("fit_report.csv", io::fit_report_csv(fit, s));
  const auto filter = marginal_state_probs(expanded_probabilities(a.trace, ProbabilityKind::filter), a.chain,
                                           ProbabilityKind::filter);
  const auto one_step = marginal_state_probs(expanded_probabilities(a.trace, ProbabilityKind::one_step_ahead),
                                             a.chain, ProbabilityKind::one_step_ahead);
  const auto smooth = marginal_state_probs(a.smoothing, a.chain, ProbabilityKind::smoothing);
  out.add("state_probs.csv", state_probs_csv({filter, one_step, smooth}));
  if (r > 0) {
    const Matrix traj = covariate_effect_trajectory(fit.theta_hat.beta, smooth.probs);
    io::CsvWriter w({"t", "time", "covariate", "effect"});
    for (Eigen::Index t = 0; t < traj.rows(); ++t) {
      for (int c = 0; c < r; ++c) {
        w.row({std::to_string(t + 1), bundle.time_index[t], covs[c], io::format_number(traj(t, c))});
      }
    }
    out.add("covariate_effects.csv", w.str());
  }
  out.add("summary.txt", fit_summary_text(fit, a, covs));
  out.commit();
}

struct ModelArgs {
  DataArgs data;
  std::string fit;
  std::optional<int> p_override;
  bool raw_count_feedback = false;
  int max_lag = -1;
  int horizon = 1;
  std::string future_covariates;
  std::string out;
};

struct LoadedModel {
  ParameterSet theta;
  std::vector<std::string> covariates;
  io::SeriesBundle bundle;
  Matrix X;
};

LoadedModel load_model(const ModelArgs& args) {
  LoadedModel m;
  std::tie(m.theta, m.covariates) = io::parameters_from_report(io::read_fit_report(args.fit));
  m.bundle = load_bundle(args.data, m.covariates);
  m.X = m.bundle.select(m.covariates);
  return m;
}

void run_predict(const ModelArgs& args) {
  if (args.horizon < 1) throw UsageError("--horizon must be at least 1");
  const LoadedModel model = load_model(args);
  FilterOptions filter;
  filter.raw_count_feedback = args.raw_count_feedback;
  const Analysis a = analyse(model.theta, model.bundle.y, model.X, filter, args.p_override, args.max_lag);

  Matrix X_future;
  std::vector<std::string> future_labels;
  if (!model.covariates.empty()) {
    if (args.future_covariates.empty()) {
      throw DataError("model has covariates; --future-covariates must supply rows T+1..T+horizon");
    }
    const io::SeriesBundle fut = read_covariate_file(args.future_covariates, args.data.time_col, model.covariates);
    if (fut.length() < args.horizon) {
      throw DataError("future covariates supply " + std::to_string(fut.length()) + " rows; horizon needs " +
                      std::to_string(args.horizon));
    }
    X_future = fut.covariates;
    future_labels = fut.time_index;
  }
  const PredictionSeries fc = forecast(model.theta, a.trace, args.horizon, X_future, filter);

  io::CsvWriter w({"t", "time", "kind", "lambda_hat"});
  const int T = model.bundle.length();
  for (const PredictionSeries* s : {&a.one_step, &a.smoothed}) {
    for (int t = 0; t < T; ++t) {
      w.row({std::to_string(t + 1), model.bundle.time_index[t], to_string(s->kind), io::format_number(s->values(t))});
    }
  }
  for (int h = 0; h < args.horizon; ++h) {
    w.row({std::to_string(T + h + 1), future_labels.empty() ? "" : future_labels[h], to_string(fc.kind),
           io::format_number(fc.values(h))});
  }
  io::OutputSet out(args.out);
  out.add("predictions.csv", w.str());
  out.commit();
}

void run_diagnose(const ModelArgs& args) {
  const LoadedModel model = load_model(args);
  FilterOptions filter;
  filter.raw_count_feedback = args.raw_count_feedback;
  const Analysis a = analyse(model.theta, model.bundle.y, model.X, filter, args.p_override, args.max_lag);
  const int T = model.bundle.length();

  io::CsvWriter res({"t", "time", "y", "lambda_hat", "pearson_residual"});
  io::CsvWriter var({"t", "lambda_hat", "squared_raw_residual"});
  for (int t = 0; t < T; ++t) {
    res.row({std::to_string(t + 1), model.bundle.time_index[t], std::to_string(model.bundle.y[t]),
             io::format_number(a.smoothed.values(t)), io::format_number(a.diag.pearson_residuals(t))});
    var.row({std::to_string(t + 1), io::format_number(a.diag.poisson_check_pairs[t].first),
             io::format_number(a.diag.poisson_check_pairs[t].second)});
  }
  io::CsvWriter acf({"lag", "acf"});
  for (Eigen::Index l = 0; l < a.diag.acf.size(); ++l) {
    acf.row({std::to_string(l + 1), io::format_number(a.diag.acf(l))});
  }
  std::ostringstream summary;
  summary << "T = " << T << "\np = " << a.p << "\ndf = " << T - a.p << "\nqll = " << io::format_number(a.trace.qll)
          << "\naic = " << io::format_number(a.diag.aic) << "\nbic = " << io::format_number(a.diag.bic)
          << "\nmse = " << (a.diag.mse_defined ? io::format_number(a.diag.residual_mse) : "undefined (T <= p)")
          << "\nacf_band = " << io::format_number(2.0 / std::sqrt(static_cast<double>(T))) << "\n";

  io::OutputSet out(args.out);
  out.add("residuals.csv", res.str());
  out.add("acf.csv", acf.str());
  out.add("variance_check.csv", var.str());
  out.add("summary.txt", summary.str());
  out.commit();
}

struct StudyArgs {
  int case_id = 1;
  std::vector<int> T;
  int R = 0;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  int starts = 1;
  bool heuristic_init = false;
  int burn_in = 100;
  std::string out;
};

void run_mc_study(const StudyArgs& args) {
  if (!args.seed) throw UsageError("mc-study requires --seed");
  if (args.T.empty()) throw UsageError("mc-study requires --T");
  const ParameterSet truth = case_parameters(args.case_id);
  StudyOptions opt;
  opt.threads = args.threads;
  opt.n_starts = args.starts;
  opt.init_at_truth = !args.heuristic_init;
  opt.simulation.burn_in = args.burn_in;

  io::CsvWriter table({"T", "parameter", "value", "bias", "SE", "SE_hat"});
  io::CsvWriter standardized({"T", "replicate", "parameter", "standardized"});
  std::ostringstream summary;
  summary << "case " << args.case_id << ", R = " << args.R << ", seed = " << *args.seed << "\n";
  bool all_valid = true;
  for (std::size_t k = 0; k < args.T.size(); ++k) {
    const int T = args.T[k];
    // Each sample size draws from its own sub-stream of the master seed.
    const StudyReport rep = monte_carlo_study(truth, T, args.R, derive_seed(*args.seed, 1000 + k), opt);
    for (const auto& row : rep.rows) {
      table.row({std::to_string(T), row.parameter, io::format_number(row.value), io::format_number(row.bias),
                 io::format_number(row.se), io::format_number(row.se_hat)});
    }
    for (Eigen::Index i = 0; i < rep.standardized.rows(); ++i) {
      for (std::size_t q = 0; q < rep.rows.size(); ++q) {
        standardized.row({std::to_string(T), std::to_string(rep.replicate_index[i] + 1), rep.rows[q].parameter,
                          io::format_number(rep.standardized(i, static_cast<Eigen::Index>(q)))});
      }
    }
    summary << "T = " << T << ": failures = " << rep.failures << " of " << rep.R
            << (rep.valid ? "" : " (INVALID: more than 10% failed)") << "\n";
    for (const auto& row : rep.rows) {
      summary << "  " << row.parameter << ": coverage95 = " << io::format_number(row.coverage) << "\n";
    }
    all_valid = all_valid && rep.valid;
  }
  io::OutputSet out(args.out);
  out.add("mc_study.csv", table.str());
  out.add("mc_standardized.csv", standardized.str());
  out.add("summary.txt", summary.str());
  out.commit();
  if (!all_valid) throw NumericalError("more than 10% of replicates failed; report flagged invalid");
}

// ---------------------------------------------------------------------------
// Flat key=value configuration: each key names a long flag of the chosen
// command. Flags on the command line take precedence.

std::vector<std::string> config_arguments(const fs::path& path, CLI::App* cmd,
                                          const std::vector<std::string>& given) {
  std::istringstream in(io::read_file(path));
  std::string line;
  std::vector<std::string> out;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = io::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path.string() + " line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = io::trim(t.substr(0, eq));
    const std::string value = io::trim(t.substr(eq + 1));
    const std::string flag = "--" + key;
    const CLI::Option* opt = cmd->get_option_no_throw(flag);
    if (opt == nullptr || key == "config") {
      throw UsageError(path.string() + " line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    bool overridden = false;
    for (const auto& g : given) overridden = overridden || g == flag || g.rfind(flag + "=", 0) == 0;
    if (overridden) continue;
    if (opt->get_type_size() == 0) {
      if (value == "true" || value == "1" || value == "yes") out.push_back(flag);
    } else {
      out.push_back(flag);
      out.push_back(value);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Markov-switching Poisson log-linear autoregressive models"};
  app.require_subcommand(1);
  std::string config;

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "simulate a series");
  c_sim->add_option("--case", sim.case_id, "built-in parameter case (1 or 2)");
  c_sim->add_option("--params", sim.params, "fit_report.csv to take parameters from");
  c_sim->add_option("--T", sim.T, "series length")->required()->check(CLI::PositiveNumber);
  c_sim->add_option("--seed", sim.seed, "random seed (required)");
  c_sim->add_option("--burn-in", sim.burn_in, "discarded initial steps")->check(CLI::NonNegativeNumber);
  c_sim->add_option("--covariates-input", sim.covariate_input, "CSV holding covariate columns");
  c_sim->add_option("--time-col", sim.time_col, "time column of the covariate CSV");
  c_sim->add_option("--out", sim.out, "output directory")->required();

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "quasi-maximum-likelihood fit");
  add_data_options(c_fit, fit.data);
  c_fit->add_option("--m", fit.m, "number of regimes")->required();
  c_fit->add_option("--covariates", fit.covariates, "comma separated covariate columns");
  c_fit->add_option("--starts", fit.starts, "number of optimiser starts")->check(CLI::PositiveNumber);
  c_fit->add_option("--seed", fit.seed, "seed for perturbed starts");
  c_fit->add_option("--dispersion", fit.dispersion, "start perturbation half-width");
  c_fit->add_option("--init", fit.init, "fit_report.csv used as starting point");
  c_fit->add_option("--p-override", fit.p_override, "parameter count used for MSE/AIC/BIC");
  c_fit->add_flag("--raw-count-feedback", fit.raw_count_feedback, "regress on Y_{t-1} instead of log(Y_{t-1}+1)");
  c_fit->add_option("--max-iter", fit.max_iter, "optimiser iteration limit");
  c_fit->add_option("--out", fit.out, "output directory")->required();

  ModelArgs pred;
  auto* c_pred = app.add_subcommand("predict", "in-sample predictions and forecasts");
  add_data_options(c_pred, pred.data);
  c_pred->add_option("--fit", pred.fit, "fit_report.csv")->required();
  c_pred->add_option("--horizon", pred.horizon, "forecast horizon k");
  c_pred->add_option("--future-covariates", pred.future_covariates, "CSV with covariates for T+1..T+k");
  c_pred->add_flag("--raw-count-feedback", pred.raw_count_feedback, "regress on Y_{t-1}");
  c_pred->add_option("--out", pred.out, "output directory")->required();

  ModelArgs diag;
  auto* c_diag = app.add_subcommand("diagnose", "residual diagnostics");
  add_data_options(c_diag, diag.data);
  c_diag->add_option("--fit", diag.fit, "fit_report.csv")->required();
  c_diag->add_option("--p-override", diag.p_override, "parameter count used for MSE/AIC/BIC");
  c_diag->add_option("--max-lag", diag.max_lag, "largest ACF lag (default min(40, T/4))");
  c_diag->add_flag("--raw-count-feedback", diag.raw_count_feedback, "regress on Y_{t-1}");
  c_diag->add_option("--out", diag.out, "output directory")->required();

  StudyArgs study;
  auto* c_mc = app.add_subcommand("mc-study", "Monte-Carlo study of the estimator");
  c_mc->add_option("--case", study.case_id, "parameter case (1 or 2)")->check(CLI::Range(1, 2));
  c_mc->add_option("--T", study.T, "sample sizes")->required()->delimiter(',');
  c_mc->add_option("--R", study.R, "replicates per sample size")->required()->check(CLI::PositiveNumber);
  c_mc->add_option("--seed", study.seed, "master seed (required)");
  c_mc->add_option("--threads", study.threads, "worker threads")->check(CLI::PositiveNumber);
  c_mc->add_option("--starts", study.starts, "starts per fit")->check(CLI::PositiveNumber);
  c_mc->add_flag("--heuristic-init", study.heuristic_init, "start fits from the heuristic instead of the truth");
  c_mc->add_option("--burn-in", study.burn_in, "discarded initial simulation steps");
  c_mc->add_option("--out", study.out, "output directory")->required();

  for (auto* cmd : {c_sim, c_fit, c_pred, c_diag, c_mc}) {
    cmd->add_option("--config", config, "key=value file mirroring the flags");
  }

  try {
    // Expand --config before the real parse so command-line flags win.
    std::vector<std::string> args(argv + 1, argv + argc);
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
      if (args[i] == "--config" && !args.empty()) {
        CLI::App* cmd = app.get_subcommand_no_throw(args[0]);
        if (cmd == nullptr) throw UsageError("--config must follow a command");
        const auto extra = config_arguments(args[i + 1], cmd, args);
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
        args.insert(args.begin() + 1, extra.begin(), extra.end());
        break;
      }
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(kExitUsage, "usage", e.what());
  } catch (const DataError& e) {
    return report_error(kExitData, "data", e.what());
  } catch (const Error& e) {
    return report_error(kExitUsage, "usage", e.what());
  }

  try {
    if (*c_sim) run_simulate(sim);
    else if (*c_fit) run_fit(fit);
    else if (*c_pred) run_predict(pred);
    else if (*c_diag) run_diagnose(diag);
    else if (*c_mc) run_mc_study(study);
  } catch (const UsageError& e) {
    return report_error(kExitUsage, "usage", e.what());
  } catch (const DataError& e) {
    return report_error(kExitData, "data", e.what());
  } catch (const NumericalError& e) {
    return report_error(kExitNumerical, "numerical", e.what());
  } catch (const CLI::Error& e) {
    return report_error(kExitUsage, "usage", e.what());
  } catch (const std::exception& e) {
    return report_error(kExitNumerical, "numerical", e.what());
  }
  return 0;
}
