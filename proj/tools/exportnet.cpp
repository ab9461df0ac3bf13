// exportnet: ingest -> calibrate -> simulate -> analyze -> sweep on real or synthetic panels.
//
//   exportnet synth --out run/synth --seed 3
//   exportnet calibrate --panel run/synth/panel.csv --out run/cal
//   exportnet sweep --params run/cal/report.json --out run/sweep
//
// Every command takes --config FILE with `key = value` lines (long option
// names); options given on the command line win. The resolved configuration
// is written to <out>/config.txt.

#include "exportnet/analysis.hpp"
#include "exportnet/calibration.hpp"
#include "exportnet/dataset.hpp"
#include "exportnet/inflation.hpp"
#include "exportnet/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace exportnet;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kValidationFailure = 2;

/// Bad input detected by the CLI itself (missing file, bad value).
struct InvalidInput : Error {
  using Error::Error;
};

struct Common {
  std::uint64_t seed = 1;
  unsigned threads = 0;
  std::string out = "out";
  double dt = 0.01;
  std::string policy = "reject";
};

struct Source {
  std::string panel;
  std::string inflation = "reference";
  Index window = 10;
  // synthetic structure when no panel is given
  Index products = 219;
  Index years = 39;
  double pareto = 1.5;
  Index factors = 3;
  double loadings = 1.0;
  double dispersion = 0.5;
  double compression = 1.0;
  double emerging_fraction = 0.0;
  double emerging_depth = 1.0;
  std::uint64_t structure_seed = 1;
};

struct ParamArgs {
  std::string file;
  std::optional<double> coupling, sigma, tau, mu_bar;
};

// ---- small io helpers ----

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw InvalidInput(std::string(what) + " path is required");
  if (!fs::is_regular_file(path)) throw InvalidInput(std::string(what) + " file not found: " + path);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const json& j) { open_out(path) << j.dump(2) << '\n'; }

std::string num(double v) { return csv::format_double(v); }

json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json to_json(const ModelParams& p) {
  return {{"coupling", p.coupling}, {"sigma", p.sigma}, {"tau", p.tau}, {"mu_bar", p.mu_bar},
          {"inflation_mean", p.inflation.mean()}, {"inflation_years", p.inflation.span()}};
}

void write_matrix(const fs::path& path, const std::vector<std::string>& ids, const Matrix& m) {
  auto out = open_out(path);
  out << "product_id";
  for (const auto& id : ids) out << ',' << id;
  out << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    out << ids[static_cast<std::size_t>(i)];
    for (Index j = 0; j < m.cols(); ++j) out << ',' << num(m(i, j));
    out << '\n';
  }
}

void write_vector(const fs::path& path, const std::vector<std::string>& ids, const Vector& v, const char* column) {
  auto out = open_out(path);
  out << "product_id," << column << '\n';
  for (Index i = 0; i < v.size(); ++i) out << ids[static_cast<std::size_t>(i)] << ',' << num(v[i]) << '\n';
}

void write_trajectory(const fs::path& path, const std::vector<std::string>& ids, const std::vector<double>& times,
                      const Matrix& states) {
  auto out = open_out(path);
  out << "t,product_id,value\n";
  for (Index k = 0; k < states.cols(); ++k)
    for (Index i = 0; i < states.rows(); ++i)
      out << num(times[static_cast<std::size_t>(k)]) << ',' << ids[static_cast<std::size_t>(i)] << ','
          << num(states(i, k)) << '\n';
}

/// Reads a `product_id,<column>` file or a square `product_id,<ids...>` table,
/// checking the ids against the panel's.
Matrix read_table(const std::string& path, const std::vector<std::string>& ids, Index columns) {
  require_file(path, "table");
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  Matrix m(static_cast<Index>(ids.size()), columns);
  std::size_t line_no = 1;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!std::getline(in, line)) throw InvalidInput(path + ": expected " + std::to_string(ids.size()) + " rows");
    ++line_no;
    const auto fields = csv::split(line);
    if (static_cast<Index>(fields.size()) != columns + 1)
      throw InvalidInput(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(columns + 1) + " fields");
    if (fields[0] != ids[i])
      throw InvalidInput(path + ":" + std::to_string(line_no) + ": product '" + std::string(fields[0]) +
                         "' does not match panel product '" + ids[i] + "'");
    for (Index j = 0; j < columns; ++j) m(static_cast<Index>(i), j) = csv::parse_double(fields[j + 1], line_no);
  }
  return m;
}

IngestionPolicy parse_policy(const std::string& s) {
  if (s == "reject") return IngestionPolicy::kReject;
  if (s == "floor") return IngestionPolicy::kFloor;
  throw InvalidInput("unknown policy '" + s + "' (reject or floor)");
}

// ---- resolution of inputs ----

/// "reference" is the built-in 1963-2000 table, "none" is zero inflation,
/// anything else a `year,rate_percent` file.
InflationSchedule resolve_inflation(const std::string& spec, int base_year, Index intervals) {
  if (spec == "none") return InflationSchedule::zero(intervals);
  if (spec == "reference") {
    auto ref = reference_inflation();
    if (base_year != 1962 || intervals > ref.span())
      throw InvalidInput("the reference inflation table covers 1963-2000 only; pass --inflation FILE or none");
    return ref;
  }
  require_file(spec, "inflation");
  return load_inflation(spec, base_year, intervals);
}

struct Structure {
  std::vector<std::string> ids;
  Vector z;
  Matrix correlation;
  Vector initial;
  Index years = 0;
  int base_year = 1962;
  std::optional<ExportPanel> panel;
  std::vector<std::string> notes;
};

SyntheticSpec synthetic_spec(const Source& s) {
  SyntheticSpec spec;
  spec.products = s.products;
  spec.years = s.years;
  spec.pareto_exponent = s.pareto;
  spec.factors = s.factors;
  spec.loadings_scale = s.loadings;
  spec.initial_dispersion = s.dispersion;
  spec.initial_compression = s.compression;
  spec.emerging_fraction = s.emerging_fraction;
  spec.emerging_depth = s.emerging_depth;
  spec.seed = s.structure_seed;
  return spec;
}

Structure resolve_structure(const Source& s, const Common& c) {
  Structure out;
  if (!s.panel.empty()) {
    require_file(s.panel, "panel");
    IngestionReport report;
    ExportPanel panel = load_panel(s.panel, parse_policy(c.policy), &report);
    const auto stats = compute_statistics(panel, s.window);
    out.ids = panel.product_ids;
    out.z = stats.z;
    out.correlation = stats.correlation;
    out.initial = panel.values.col(0);
    out.years = panel.years();
    out.base_year = panel.base_year;
    out.notes = report.repairs;
    out.panel = std::move(panel);
  } else {
    const auto syn = resolve_synthetic(synthetic_spec(s));
    out.ids = default_product_ids(s.products);
    out.z = syn.z;
    out.correlation = syn.correlation;
    out.initial = syn.initial;
    out.years = s.years;
  }
  return out;
}

ModelParams resolve_params(const ParamArgs& a, InflationSchedule inflation) {
  ModelParams p = reference_params(std::move(inflation));
  if (!a.file.empty()) {
    require_file(a.file, "params");
    std::ifstream in(a.file);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw InvalidInput("params file " + a.file + " is not valid JSON: " + e.what());
    }
    const json& q = j.contains("params") ? j["params"] : j;
    p.coupling = q.value("coupling", p.coupling);
    p.sigma = q.value("sigma", p.sigma);
    p.tau = q.value("tau", p.tau);
    p.mu_bar = q.value("mu_bar", p.mu_bar);
  }
  if (a.coupling) p.coupling = *a.coupling;
  if (a.sigma) p.sigma = *a.sigma;
  if (a.tau) p.tau = *a.tau;
  if (a.mu_bar) p.mu_bar = *a.mu_bar;
  try {
    p.validate();
  } catch (const ArgumentError& e) {
    throw InvalidInput(std::string("parameters: ") + e.what());
  }
  return p;
}

// ---- option registration ----

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Master seed for every stochastic output");
  app->add_option("--threads", c.threads, "Worker cap (0 = hardware concurrency)");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--dt", c.dt, "Integration step, years")->check(CLI::PositiveNumber);
  app->add_option("--policy", c.policy, "Non-positive panel values: reject or floor")
      ->check(CLI::IsMember({"reject", "floor"}));
}

void add_source(CLI::App* app, Source& s) {
  app->add_option("--panel", s.panel, "Panel CSV; without it a synthetic structure is used");
  app->add_option("--inflation", s.inflation, "reference, none, or a year,rate_percent CSV");
  app->add_option("--window", s.window, "Years averaged for the rank weights")->check(CLI::PositiveNumber);
  app->add_option("--products", s.products, "Synthetic product count");
  app->add_option("--years", s.years, "Synthetic panel years");
  app->add_option("--pareto", s.pareto, "Synthetic rank-weight Pareto exponent");
  app->add_option("--factors", s.factors, "Synthetic correlation factor count");
  app->add_option("--loadings", s.loadings, "Synthetic factor loading scale");
  app->add_option("--dispersion", s.dispersion, "Log-normal spread of synthetic initial values");
  app->add_option("--compression", s.compression, "Exponent applied to z in synthetic initial values");
  app->add_option("--emerging-fraction", s.emerging_fraction, "Share of synthetic products started low");
  app->add_option("--emerging-depth", s.emerging_depth, "Largest factor an emerging product starts below");
  app->add_option("--structure-seed", s.structure_seed, "Seed of the synthetic structure");
}

void add_params(CLI::App* app, ParamArgs& a) {
  app->add_option("--params", a.file, "JSON with coupling, sigma, tau, mu_bar (a calibration report works)");
  app->add_option("--G", a.coupling, "Coupling G, 1/year");
  app->add_option("--sigma", a.sigma, "Noise amplitude");
  app->add_option("--tau", a.tau, "Noise memory time, years");
  app->add_option("--mu-bar", a.mu_bar, "Real deterministic growth rate");
}

/// Writes every option of `app` as `key = value`, defaults included.
void echo_config(const CLI::App* app, const fs::path& path) {
  auto out = open_out(path);
  out << "# exportnet " << app->get_name() << '\n';
  for (const CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config" || opt->get_lnames().empty()) continue;
    std::string value;
    if (opt->count() > 0) {
      const auto r = opt->reduced_results();
      for (std::size_t k = 0; k < r.size(); ++k) value += (k ? " " : "") + r[k];
      if (opt->get_type_size() == 0) value = "true";
    } else {
      value = opt->get_default_str();
      if (opt->get_type_size() == 0 && value.empty()) value = "false";
      if (value.empty()) continue;
    }
    out << name << " = " << value << '\n';
  }
}

/// Reads `key = value` lines into `--key value` arguments.
std::vector<std::string> config_arguments(const std::string& path) {
  require_file(path, "config");
  std::ifstream in(path);
  std::vector<std::string> args;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = std::string(csv::trim(line));
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw InvalidInput(path + ":" + std::to_string(line_no) + ": expected key = value");
    const auto key = std::string(csv::trim(std::string_view(t).substr(0, eq)));
    const auto value = std::string(csv::trim(std::string_view(t).substr(eq + 1)));
    if (key == "config") continue;
    if (value == "true") {
      args.push_back("--" + key);
    } else if (value != "false") {
      args.push_back("--" + key);
      args.push_back(value);
    }
  }
  return args;
}

fs::path prepare_out(const Common& c) {
  fs::path out(c.out);
  fs::create_directories(out);
  set_thread_limit(c.threads);
  return out;
}

// ---- commands ----

int cmd_ingest(CLI::App* app, const Common& c, const Source& s, bool edges, double edge_G) {
  require_file(s.panel, "panel");
  IngestionReport report;
  const ExportPanel panel = load_panel(s.panel, parse_policy(c.policy), &report);
  const auto stats = compute_statistics(panel, s.window);
  const auto out = prepare_out(c);
  echo_config(app, out / "config.txt");

  write_vector(out / "z.csv", panel.product_ids, stats.z, "z");
  write_matrix(out / "correlation.csv", panel.product_ids, stats.correlation);
  {
    auto f = open_out(out / "returns.csv");
    f << "product_id";
    for (Index n = 1; n < panel.years(); ++n) f << ",year_" << panel.base_year + n;
    f << '\n';
    for (Index i = 0; i < panel.products(); ++i) {
      f << panel.product_ids[static_cast<std::size_t>(i)];
      for (Index n = 0; n < stats.returns.cols(); ++n) f << ',' << num(stats.returns(i, n));
      f << '\n';
    }
  }
  if (edges) {
    auto f = open_out(out / "network_edges.csv");
    write_edge_list(f, build_coupling(stats.z, stats.correlation, edge_G), panel.product_ids);
  }

  const auto factor = factor_correlation(stats.correlation);
  json summary = {{"products", panel.products()},
                  {"years", panel.years()},
                  {"base_year", panel.base_year},
                  {"last_year", panel.last_year()},
                  {"policy", c.policy},
                  {"repairs", report.repairs},
                  {"z_sum", stats.z.sum()},
                  {"mean_abs_correlation", mean_abs_off_diagonal(stats.correlation)},
                  {"clamped_pivots", factor.clamp_count},
                  {"mean_link_weight_at_reference_G",
                   mean_link_weight(build_coupling(stats.z, stats.correlation, reference_params().coupling))}};
  if (s.inflation != "none") {
    const auto infl = resolve_inflation(s.inflation, panel.base_year, panel.years() - 1);
    summary["inflation_mean"] = infl.mean();
  }
  if (panel.products() >= 50) {
    const auto tail = pareto_tail_exponent(panel.values.col(panel.years() - 1));
    summary["pareto"] = {{"hill_exponent", tail.hill_exponent},
                         {"rank_size_exponent", tail.rank_size_exponent},
                         {"ks_distance", tail.ks_distance},
                         {"plausible", tail.plausible}};
  }
  write_json(out / "summary.json", summary);
  std::cout << "ingested " << panel.products() << " products x " << panel.years() << " years ("
            << report.repairs.size() << " repaired values) -> " << out.string() << '\n';
  return 0;
}

struct CalibrateArgs {
  std::string z_file, correlation_file;
  double top_fraction = 0.1;
  std::string weighting = "inverse-square";
  int mu_replicates = 100;
  int uncertainty = 0;
};

int cmd_calibrate(CLI::App* app, const Common& c, const Source& s, const CalibrateArgs& a) {
  require_file(s.panel, "panel");
  IngestionReport ingest;
  const ExportPanel panel = load_panel(s.panel, parse_policy(c.policy), &ingest);
  const auto inflation = resolve_inflation(s.inflation, panel.base_year, panel.years() - 1);
  CalibrationOptions opt;
  opt.weight_window = s.window;
  opt.top_fraction = a.top_fraction;
  opt.variance.weighting =
      a.weighting == "none" ? VarianceWeighting::kUnweighted : VarianceWeighting::kInverseSquare;
  opt.mu_bar.replicates = a.mu_replicates;
  opt.mu_bar.seed = c.seed;
  opt.mu_bar.simulation.dt = c.dt;
  const auto out = prepare_out(c);
  echo_config(app, out / "config.txt");

  // a known structure (e.g. from `synth`) replaces the panel estimates of z and C
  PanelStatistics structure = compute_statistics(panel, s.window);
  if (!a.z_file.empty()) structure.z = read_table(a.z_file, panel.product_ids, 1).col(0);
  if (!a.correlation_file.empty())
    structure.correlation = read_table(a.correlation_file, panel.product_ids, panel.products());
  auto report = calibrate_with_structure(panel, structure, inflation, opt);
  if (a.uncertainty > 0) {
    UncertaintyOptions u;
    u.replicates = a.uncertainty;
    u.seed = derive_seed(c.seed, 17);
    u.simulation.dt = c.dt;
    u.calibration = opt;
    report.stddevs = estimate_uncertainty(
        report.params, {report.statistics.z, report.statistics.correlation, panel.values.col(0), panel.years(),
                        panel.base_year},
        u);
  }

  const auto points = compute_fg_points(panel, report.statistics, inflation);
  {
    std::vector<char> selected(points.size(), 0);
    for (auto k : report.coupling_fit.selected) selected[k] = 1;
    auto f = open_out(out / "fg_points.csv");
    f << "product_id,n1,n2,f,g,selected\n";
    for (std::size_t k = 0; k < points.size(); ++k)
      f << panel.product_ids[static_cast<std::size_t>(points[k].product)] << ',' << points[k].n1 << ','
        << points[k].n2 << ',' << num(points[k].f) << ',' << num(points[k].g) << ',' << int(selected[k]) << '\n';
  }
  {
    auto f = open_out(out / "variance_curve.csv");
    f << "n,empirical,fitted\n";
    const auto& curve = report.variance_fit.curve;
    for (std::size_t k = 0; k < curve.size(); ++k)
      f << k + 1 << ',' << num(curve[k]) << ','
        << num(theoretical_variance(double(k + 1), report.params.sigma, report.params.tau)) << '\n';
  }

  json j = {{"params", to_json(report.params)},
            {"regression",
             {{"coupling", report.coupling_fit.coupling},
              {"intercept", report.coupling_fit.intercept},
              {"total_points", report.coupling_fit.total_points},
              {"selected_points", report.coupling_fit.selected.size()},
              {"residual_rms", report.coupling_fit.residual_rms}}},
            {"variance",
             {{"sigma", report.variance_fit.sigma},
              {"tau", report.variance_fit.tau},
              {"residual", report.variance_fit.residual},
              {"converged", report.variance_fit.converged},
              {"weighting", a.weighting}}},
            {"growth",
             {{"mu_bar", report.growth.mu_bar},
              {"empirical", report.growth.empirical_growth},
              {"simulated", report.growth.simulated_growth},
              {"evaluations", report.growth.iterations},
              {"replicates", a.mu_replicates}}},
            {"panel", {{"path", s.panel}, {"products", panel.products()}, {"years", panel.years()},
                       {"base_year", panel.base_year}, {"repairs", ingest.repairs}}},
            {"seed", c.seed},
            {"warnings", report.warnings}};
  if (report.stddevs) {
    const auto& sd = *report.stddevs;
    j["stddevs"] = {{"coupling", sd.coupling}, {"sigma", sd.sigma}, {"tau", sd.tau},
                    {"mu_bar", sd.mu_bar},     {"replicates", sd.replicates}, {"warnings", sd.warnings}};
  }
  write_json(out / "report.json", j);
  const auto& p = report.params;
  std::printf("G %.4f  sigma %.4f  tau %.3f  mu_bar %.4f  (intercept %.4f) -> %s\n", p.coupling, p.sigma, p.tau,
              p.mu_bar, report.intercept(), out.string().c_str());
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  return 0;
}

struct SimulateArgs {
  double horizon = 0.0;  // 0: panel span
  double interval = 1.0;
  int replicates = 1;
  bool full_resolution = false;
  std::string scheme = "exponential";
};

int cmd_simulate(CLI::App* app, const Common& c, const Source& s, const ParamArgs& pa, const SimulateArgs& a) {
  const auto st = resolve_structure(s, c);
  const auto params = resolve_params(pa, resolve_inflation(s.inflation, st.base_year, st.years - 1));
  SimulationOptions sim;
  sim.horizon = a.horizon > 0.0 ? a.horizon : double(st.years - 1);
  sim.dt = c.dt;
  sim.sample_interval = a.interval;
  sim.full_resolution = a.full_resolution;
  sim.scheme = a.scheme == "euler" ? Scheme::kEuler : Scheme::kExponentialEuler;
  if (a.replicates < 1) throw InvalidInput("--replicates must be >= 1");
  const auto out = prepare_out(c);
  echo_config(app, out / "config.txt");

  const EnsembleSpec spec{st.initial, st.z, st.correlation, {}};
  const auto ens = simulate_ensemble(spec, params, sim, a.replicates, c.seed);
  json runs = json::array();
  std::size_t guarded = 0;
  for (std::size_t r = 0; r < ens.size(); ++r) {
    const auto name = a.replicates == 1 ? std::string("trajectory.csv") : [&] {
      char buf[32];
      std::snprintf(buf, sizeof buf, "trajectory_%03zu.csv", r);
      return std::string(buf);
    }();
    write_trajectory(out / name, st.ids, ens[r].times, ens[r].states);
    runs.push_back({{"file", name}, {"seed", ens[r].seed}, {"guard_activations", ens[r].guard_activations},
                    {"warnings", ens[r].warnings}});
    guarded += ens[r].guard_activations;
  }
  if (a.replicates > 1) {
    Matrix mean = Matrix::Zero(ens[0].states.rows(), ens[0].states.cols());
    for (const auto& t : ens) mean += t.states;
    mean /= double(ens.size());
    write_trajectory(out / "mean.csv", st.ids, ens[0].times, mean);
  }
  write_json(out / "trajectory.json", {{"params", to_json(params)},
                                       {"seed", c.seed},
                                       {"horizon", sim.horizon},
                                       {"dt", sim.dt},
                                       {"scheme", a.scheme},
                                       {"samples", ens[0].samples()},
                                       {"runs", runs},
                                       {"notes", st.notes}});
  std::cout << "simulated " << a.replicates << " x " << st.z.size() << " products over " << sim.horizon << " y ("
            << guarded << " guard activations) -> " << out.string() << '\n';
  return 0;
}

struct AnalyzeArgs {
  int replicates = 100;
  double horizon = 38.0;
  int histories = 20;
};

int cmd_analyze(CLI::App* app, const Common& c, const Source& s, const ParamArgs& pa, const AnalyzeArgs& a) {
  const auto st = resolve_structure(s, c);
  const auto params = resolve_params(pa, resolve_inflation(s.inflation, st.base_year, st.years - 1));
  if (a.replicates < 1 || a.histories < 2) throw InvalidInput("need --replicates >= 1 and --histories >= 2");
  SimulationOptions sim;
  sim.horizon = a.horizon;
  sim.dt = c.dt;
  const auto out = prepare_out(c);
  echo_config(app, out / "config.txt");

  EnsembleSpec spec{st.initial, st.z, st.correlation, {}};
  const auto ens = simulate_ensemble(spec, params, sim, a.replicates, c.seed);
  const auto rs = mean_spearman(ens, st.z);
  {
    auto f = open_out(out / "spearman.csv");
    f << "t,r_s\n";
    for (std::size_t k = 0; k < rs.size(); ++k) f << num(ens[0].times[k]) << ',' << num(rs[k]) << '\n';
  }
  json j = {{"params", to_json(params)}, {"seed", c.seed}, {"replicates", a.replicates}};
  try {
    const auto fit = fit_relaxation(ens[0].times, rs, a.replicates);
    j["relaxation"] = {{"tau_s", fit.tau_s}, {"r_inf", fit.r_inf}, {"r0", fit.r0}, {"residual", fit.residual},
                       {"low_ensemble", fit.low_ensemble}};
  } catch (const ConvergenceError& e) {
    j["relaxation"] = {{"error", e.what()}};
  }

  // correlators from yearly histories, with the network noise and with independent noise
  const std::span<const Trajectory> histories(ens.data(), std::min<std::size_t>(ens.size(), a.histories));
  const auto coupled = histories.size() >= 2
                           ? reconstruct_correlators(histories)
                           : reconstruct_correlators(simulate_ensemble(spec, params, sim, a.histories, c.seed));
  spec.noise_correlation = Matrix::Identity(st.z.size(), st.z.size());
  const auto independent = reconstruct_correlators(simulate_ensemble(spec, params, sim, a.histories, c.seed));
  write_matrix(out / "correlation_target.csv", st.ids, st.correlation);
  write_matrix(out / "correlation_reconstructed.csv", st.ids, coupled);
  write_matrix(out / "correlation_independent_noise.csv", st.ids, independent);
  json cmp = {{"histories", a.histories},
              {"target_mean_abs", mean_abs_off_diagonal(st.correlation)},
              {"reconstructed_mean_abs", mean_abs_off_diagonal(coupled)},
              {"independent_noise_mean_abs", mean_abs_off_diagonal(independent)}};
  if (st.z.size() >= 9) {
    const auto subset = comparison_subset(st.z);
    std::vector<std::string> names;
    for (auto i : subset) names.push_back(st.ids[static_cast<std::size_t>(i)]);
    cmp["subset"] = names;
    cmp["subset_mae"] = subset_mean_abs_deviation(coupled, st.correlation, subset);
    cmp["subset_mae_independent_noise"] = subset_mean_abs_deviation(independent, st.correlation, subset);
  }
  j["correlators"] = cmp;

  const Vector& values = st.panel ? Vector(st.panel->values.col(st.years - 1)) : st.z;
  if (values.size() >= 50) {
    const auto tail = pareto_tail_exponent(values);
    j["pareto"] = {{"source", st.panel ? "last panel year" : "rank weights"},
                   {"hill_exponent", tail.hill_exponent},
                   {"rank_size_exponent", tail.rank_size_exponent},
                   {"tail_size", tail.tail_size},
                   {"ks_distance", tail.ks_distance},
                   {"ks_critical", tail.ks_critical},
                   {"plausible", tail.plausible}};
  } else {
    j["pareto"] = {{"skipped", "fewer than 50 products"}};
  }
  write_json(out / "analysis.json", j);
  std::cout << "analysis of " << a.replicates << " histories -> " << out.string() << '\n';
  return 0;
}

struct SweepArgs {
  double lo = 1e-3, hi = 1.0;
  int count = 12;
  int replicates = 50;
  double transient = 38.0;
  double asymptotic = 500.0;
  double asymptotic_dt = 0.05;
  bool with_inflation = false;
};

int cmd_sweep(CLI::App* app, const Common& c, const Source& s, const ParamArgs& pa, const SweepArgs& a) {
  const auto st = resolve_structure(s, c);
  const auto params = resolve_params(pa, resolve_inflation(s.inflation, st.base_year, st.years - 1));
  const auto grid = log_grid(a.lo, a.hi, a.count);
  const auto out = prepare_out(c);
  echo_config(app, out / "config.txt");

  const EnsembleSpec spec{st.initial, st.z, st.correlation, {}};
  SweepOptions opt;
  opt.replicates = a.replicates;
  opt.seed = c.seed;
  opt.with_inflation = a.with_inflation;
  opt.simulation.dt = c.dt;
  opt.horizon = a.transient;
  const auto transient = sweep_G(spec, params, grid, opt);
  std::optional<GrowthCurve> asymptotic;
  if (a.asymptotic > 0.0) {
    opt.horizon = a.asymptotic;
    opt.simulation.dt = a.asymptotic_dt;
    asymptotic = sweep_G(spec, params, grid, opt);
  }
  {
    auto f = open_out(out / "sweep.csv");
    f << "G,lambda_transient,stderr_transient,lambda_asymptotic,stderr_asymptotic,baseline\n";
    for (std::size_t k = 0; k < grid.size(); ++k) {
      f << num(grid[k]) << ',' << num(transient.lambda[k]) << ',' << num(transient.lambda_stderr[k]) << ',';
      if (asymptotic) f << num(asymptotic->lambda[k]) << ',' << num(asymptotic->lambda_stderr[k]);
      else f << ',';
      f << ',' << num(transient.baseline) << '\n';
    }
  }
  auto curve_json = [&](const GrowthCurve& g) {
    return json{{"horizon", g.horizon},
                {"argmax", g.g_values[g.argmax()]},
                {"peak", g.peak()},
                {"lambda", g.lambda},
                {"stderr", g.lambda_stderr}};
  };
  json j = {{"params", to_json(params)},
            {"seed", c.seed},
            {"replicates", a.replicates},
            {"grid", grid},
            {"baseline", transient.baseline},
            {"with_inflation", a.with_inflation},
            {"transient", curve_json(transient)}};
  if (asymptotic) {
    j["asymptotic"] = curve_json(*asymptotic);
    j["asymptotic"]["dt"] = a.asymptotic_dt;
    j["peak_ratio"] = asymptotic->peak() / transient.peak();
  }
  write_json(out / "sweep.json", j);
  std::printf("transient peak G %.4f", transient.peak());
  if (asymptotic) std::printf(", asymptotic peak G %.4f", asymptotic->peak());
  std::printf(" -> %s\n", out.string().c_str());
  return 0;
}

int cmd_synth(CLI::App* app, const Common& c, const Source& s, const ParamArgs& pa) {
  SyntheticSpec spec = synthetic_spec(s);
  spec.seed = c.seed;
  spec.params = resolve_params(pa, resolve_inflation(s.inflation, spec.base_year, spec.years - 1));
  spec.simulation.dt = c.dt;
  const auto out = prepare_out(c);
  echo_config(app, out / "config.txt");
  const auto syn = generate_panel(spec);
  {
    auto f = open_out(out / "panel.csv");
    write_panel(f, syn.panel);
  }
  write_vector(out / "z.csv", syn.panel.product_ids, syn.z, "z");
  write_matrix(out / "correlation.csv", syn.panel.product_ids, syn.correlation);
  write_json(out / "truth.json", {{"params", to_json(syn.truth)},
                                  {"seed", c.seed},
                                  {"products", spec.products},
                                  {"years", spec.years},
                                  {"base_year", spec.base_year},
                                  {"guard_activations", syn.guard_activations},
                                  {"initial", to_json(syn.initial)}});
  std::cout << "synthetic panel " << spec.products << " x " << spec.years << " -> " << out.string() << '\n';
  return 0;
}

// reduced-scale invariant suite
int cmd_selftest(const Common& c) {
  set_thread_limit(c.threads);
  int failed = 0;
  auto row = [&](const char* check, double value, double limit, bool ok) {
    std::printf("%-34s %12.4e  %-10.3g %s\n", check, value, limit, ok ? "PASS" : "FAIL");
    failed += ok ? 0 : 1;
  };
  std::printf("%-34s %12s  %-10s %s\n", "check", "value", "limit", "result");

  {
    RandomStream rng(c.seed);
    double worst = 0;
    for (int k = 0; k < 50; ++k) {
      const Index N = 2 + static_cast<Index>(rng.uniform() * 40);
      const Vector z = pareto_weights(N, 0.5 + 2 * rng.uniform());
      const Matrix C = make_factor_correlation(N, std::min<Index>(N - 1, 2), 2 * rng.uniform(), rng.split(k).seed());
      worst = std::max(worst, kernel_residual(build_coupling(z, C, 5 * rng.uniform()), z));
    }
    row("kernel residual |A z|", worst, 1e-12, worst < 1e-12);
  }
  {
    Vector one(1);
    one << 1.0;
    const auto net = build_coupling(one, Matrix::Identity(1, 1), 0.0);
    const auto factor = factor_correlation(Matrix::Identity(1, 1));
    const ModelParams p{0.0, 0.098, 0.8, 0.0, {}};
    const std::size_t paths = 20000;
    std::vector<double> x(paths);
    SimulationOptions sim;
    sim.horizon = 5;
    parallel_for(paths, [&](std::size_t r) {
      x[r] = std::log(simulate(one, net, factor, p, sim, derive_seed(c.seed, r)).states(0, 5));
    });
    double m = 0, v = 0;
    for (double e : x) m += e;
    m /= double(paths);
    for (double e : x) v += (e - m) * (e - m);
    v /= double(paths - 1);
    const double law = theoretical_variance(5, p.sigma, p.tau);
    row("variance law at n=5 (rel. error)", std::abs(v / law - 1), 0.05, std::abs(v / law - 1) < 0.05);
  }
  {
    const Matrix C = make_factor_correlation(4, 1, 1.0, 5);
    const auto f = factor_correlation(C);
    const ModelParams p{0.0, 0.098, 0.8, 0.0, {}};
    RandomStream rng(c.seed);
    NoiseWorkspace ws;
    const int n = 10000;
    Matrix S = Matrix::Zero(4, 4);
    for (int k = 0; k < n; ++k) {
      NoiseState s = init_stationary(p, f, rng);
      for (int step = 0; step < 50; ++step) advance_noise(s, 0.02, p, f, rng, ws);
      S += s.eta * s.eta.transpose();
    }
    S /= n;
    const double v = p.sigma * p.sigma / p.tau;
    double worst = 0;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        worst = std::max(worst, std::abs(S(i, j) - v * C(i, j)) / (v * std::sqrt((1 + C(i, j) * C(i, j)) / n)));
    row("noise stationarity (worst SE)", worst, 4.0, worst < 4.0);
  }
  {
    SyntheticSpec spec;
    spec.products = 80;
    spec.loadings_scale = 0.3;
    spec.params.sigma = 0.0;
    spec.seed = c.seed;
    const auto syn = generate_panel(spec);
    CalibrationOptions opt;
    opt.mu_bar.replicates = 2;
    const auto r = calibrate_with_structure(syn.panel, {syn.z, {}, {}, syn.correlation}, spec.params.inflation, opt);
    const double g = std::abs(r.params.coupling / 0.051 - 1);
    row("noiseless round trip G (rel.)", g, 0.02, g < 0.02);
    row("noiseless round trip sigma", r.params.sigma, 1e-3, r.params.sigma <= 1e-3 + 1e-12);
    const double mu = std::abs(r.params.mu_bar - 0.041);
    row("noiseless round trip mu_bar", mu, 1e-3, mu < 1e-3);
  }
  std::printf("%s\n", failed ? "selftest FAILED" : "selftest passed");
  return failed ? kRuntimeFailure : 0;
}

bool is_validation(const std::exception& e) {
  return dynamic_cast<const InvalidInput*>(&e) || dynamic_cast<const ParseError*>(&e) ||
         dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
         dynamic_cast<const ArgumentError*>(&e) || dynamic_cast<const DegenerateProductError*>(&e);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic export-value growth model: calibration, simulation and growth analysis"};
  app.option_defaults()->always_capture_default()->take_last();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");

  Common common;
  Source source;
  ParamArgs params;
  std::string config;
  CalibrateArgs cal;
  SimulateArgs simargs;
  AnalyzeArgs ana;
  SweepArgs sw;
  bool edges = false;
  double edge_G = 0.051;

  auto* ingest = app.add_subcommand("ingest", "Rank weights, returns and correlation matrix of a panel");
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Fit G, sigma, tau and mu_bar to a panel");
  auto* simulate_cmd = app.add_subcommand("simulate", "Simulate trajectories");
  auto* analyze = app.add_subcommand("analyze", "Spearman relaxation, correlator reconstruction, Pareto tail");
  auto* sweep = app.add_subcommand("sweep", "Growth rate as a function of G, transient and asymptotic");
  auto* synth = app.add_subcommand("synth", "Generate a synthetic panel from the model");
  auto* selftest = app.add_subcommand("selftest", "Reduced-scale invariant checks");

  for (auto* sub : {ingest, calibrate_cmd, simulate_cmd, analyze, sweep, synth, selftest}) {
    sub->add_option("--config", config, "key = value file; command-line options win");
    add_common(sub, common);
  }
  for (auto* sub : {ingest, calibrate_cmd}) {
    sub->add_option("--panel", source.panel, "Panel CSV")->required();
    sub->add_option("--inflation", source.inflation, "reference, none, or a year,rate_percent CSV");
    sub->add_option("--window", source.window, "Years averaged for the rank weights")->check(CLI::PositiveNumber);
  }
  ingest->add_flag("--edges", edges, "Also write the coupling network as an edge list");
  ingest->add_option("--edge-G", edge_G, "G used for the edge list");

  calibrate_cmd->add_option("--z", cal.z_file, "Known rank weights (product_id,z) instead of panel estimates");
  calibrate_cmd->add_option("--correlation", cal.correlation_file, "Known correlation table instead of the estimate");
  calibrate_cmd->add_option("--top-fraction", cal.top_fraction, "Share of (f, g) points with the largest |g|");
  calibrate_cmd->add_option("--weighting", cal.weighting, "Variance-curve weights: inverse-square or none")
      ->check(CLI::IsMember({"inverse-square", "none"}));
  calibrate_cmd->add_option("--mu-replicates", cal.mu_replicates, "Ensemble size of the growth matching");
  calibrate_cmd->add_option("--uncertainty", cal.uncertainty, "Synthetic replicates for parameter stddevs (0 = off)");

  for (auto* sub : {simulate_cmd, analyze, sweep, synth}) {
    add_source(sub, source);
    add_params(sub, params);
  }
  simulate_cmd->add_option("--horizon", simargs.horizon, "Years to simulate (default: panel span)");
  simulate_cmd->add_option("--interval", simargs.interval, "Sampling interval, years");
  simulate_cmd->add_option("--replicates", simargs.replicates, "Ensemble size; >1 writes one file each plus mean.csv");
  simulate_cmd->add_flag("--full-resolution", simargs.full_resolution, "Store every integration step");
  simulate_cmd->add_option("--scheme", simargs.scheme, "exponential or euler")
      ->check(CLI::IsMember({"exponential", "euler"}));

  analyze->add_option("--replicates", ana.replicates, "Ensemble size for the relaxation");
  analyze->add_option("--horizon", ana.horizon, "Years simulated");
  analyze->add_option("--histories", ana.histories, "Histories averaged for correlators");

  sweep->add_option("--grid-lo", sw.lo, "Smallest G");
  sweep->add_option("--grid-hi", sw.hi, "Largest G");
  sweep->add_option("--grid-count", sw.count, "Log-spaced grid points");
  sweep->add_option("--replicates", sw.replicates, "Replicates per grid point");
  sweep->add_option("--transient", sw.transient, "Transient horizon, years");
  sweep->add_option("--asymptotic", sw.asymptotic, "Asymptotic horizon, years (0 = skip)");
  sweep->add_option("--asymptotic-dt", sw.asymptotic_dt, "Integration step of the asymptotic runs");
  sweep->add_flag("--with-inflation", sw.with_inflation, "Apply the inflation schedule, extended by its mean");

  // splice config-file arguments in ahead of the command line so the latter wins
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    for (std::size_t k = 0; k < args.size(); ++k) {
      std::string path;
      if (args[k] == "--config" && k + 1 < args.size()) path = args[k + 1];
      else if (args[k].rfind("--config=", 0) == 0) path = args[k].substr(9);
      if (path.empty()) continue;
      if (args.empty() || args[0].rfind("-", 0) == 0) throw InvalidInput("put the command before --config");
      const auto extra = config_arguments(path);
      args.insert(args.begin() + 1, extra.begin(), extra.end());
      break;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidationFailure;
  }
  std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector

  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidationFailure;
  }

  const auto start = std::chrono::steady_clock::now();
  try {
    int code = 0;
    if (*ingest) code = cmd_ingest(ingest, common, source, edges, edge_G);
    else if (*calibrate_cmd) code = cmd_calibrate(calibrate_cmd, common, source, cal);
    else if (*simulate_cmd) code = cmd_simulate(simulate_cmd, common, source, params, simargs);
    else if (*analyze) code = cmd_analyze(analyze, common, source, params, ana);
    else if (*sweep) code = cmd_sweep(sweep, common, source, params, sw);
    else if (*synth) code = cmd_synth(synth, common, source, params);
    else if (*selftest) code = cmd_selftest(common);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cerr << "done in " << secs << " s\n";
    return code;
  } catch (const std::exception& e) {
    const bool validation = is_validation(e);
    std::cerr << (validation ? "invalid input: " : "error: ") << e.what() << '\n';
    if (const auto* p = dynamic_cast<const ParseError*>(&e); p && p->line() > 0)
      std::cerr << "  at line " << p->line() << '\n';
    return validation ? kValidationFailure : kRuntimeFailure;
  }
}
