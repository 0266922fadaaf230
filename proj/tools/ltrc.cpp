// Command-line front end: fit a dataset, choose knots by cross-validation,
// run the simulation study, or generate synthetic data.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ltrc/ltrc.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitInput = 1;
constexpr int kExitNotConverged = 3;

struct InputOptions {
  std::string path;
  std::string response = "y";
  std::string event;
  std::string trunc;
  std::vector<std::string> covars;
  std::string delimiter = "comma";
  std::string transform = "none";
};

struct CommonOptions {
  std::uint64_t seed = 1;
  unsigned threads = 0;
  std::string out = ".";
  int starts = 10;
};

void add_input_options(CLI::App* cmd, InputOptions& in) {
  cmd->add_option("--data,-d", in.path, "Delimited input file with a header line")->required()->check(CLI::ExistingFile);
  cmd->add_option("--response", in.response, "Response column")->capture_default_str();
  cmd->add_option("--event", in.event, "Event indicator column (0/1); omit when every response is an event");
  cmd->add_option("--trunc", in.trunc, "Truncation-time column; blank cells mean no truncation");
  cmd->add_option("--covars", in.covars, "Covariate columns (default: all remaining columns)")->delimiter(',');
  cmd->add_option("--delimiter", in.delimiter, "comma or tab")
      ->check(CLI::IsMember({"comma", "tab"}))
      ->capture_default_str();
  cmd->add_option("--transform", in.transform, "Transform applied to response and truncation")
      ->check(CLI::IsMember({"none", "log", "logit"}))
      ->capture_default_str();
}

void add_common_options(CLI::App* cmd, CommonOptions& c) {
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--threads", c.threads, "Worker threads (0 = all cores)")->capture_default_str();
  cmd->add_option("--out,-o", c.out, "Output directory")->capture_default_str();
  cmd->add_option("--starts", c.starts, "Random starts per fit")->capture_default_str()->check(CLI::PositiveNumber);
}

ltrc::LoadedData load(const InputOptions& in) {
  ltrc::ColumnMap map;
  map.response = in.response;
  if (!in.event.empty()) map.event = in.event;
  if (!in.trunc.empty()) map.trunc = in.trunc;
  map.covars = in.covars;
  map.delimiter = in.delimiter == "tab" ? '\t' : ',';
  return ltrc::read_dataset_file(in.path, map, ltrc::parse_transform(in.transform));
}

ltrc::FitConfig fit_config(const CommonOptions& c) {
  ltrc::FitConfig cfg;
  cfg.seed = c.seed;
  cfg.threads = c.threads;
  cfg.n_starts = c.starts;
  return cfg;
}

std::vector<int> candidate_range(const std::string& spec) {
  std::vector<int> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    if (dash != std::string::npos && dash > 0) {
      const int a = std::stoi(item.substr(0, dash));
      const int b = std::stoi(item.substr(dash + 1));
      for (int k = a; k <= b; ++k) out.push_back(k);
    } else {
      out.push_back(std::stoi(item));
    }
  }
  if (out.empty()) throw std::invalid_argument("empty knot candidate list");
  for (int k : out)
    if (k < 0) throw std::invalid_argument("knot candidates must be >= 0");
  return out;
}

void print_selection(const ltrc::KnotSelection& sel) {
  std::cout << "interior_knots  mean_heldout_loglik\n";
  for (const auto& c : sel.candidates) {
    std::cout << "  " << c.n_interior << "              "
              << (c.ok ? ltrc::format_fixed(c.mean_heldout_loglik, 8) : "failed: " + c.message) << '\n';
  }
  std::cout << "selected: " << sel.selected << " interior knots\n";
}

int cmd_fit(const InputOptions& in, const CommonOptions& common, const std::string& knots,
            const std::string& candidates, int folds) {
  const ltrc::LoadedData loaded = load(in);
  const ltrc::FitConfig cfg = fit_config(common);

  ltrc::KnotSelection sel;
  int n_interior = 0;
  if (knots == "cv") {
    sel = ltrc::select_knots_detailed(loaded.data, candidate_range(candidates), folds, cfg);
    print_selection(sel);
    n_interior = sel.selected;
  } else {
    n_interior = std::stoi(knots);
    if (n_interior < 0) throw std::invalid_argument("--knots must be >= 0 or 'cv'");
  }

  const ltrc::FitResult fr = ltrc::fit(loaded.data, n_interior, cfg);
  fs::create_directories(common.out);
  const fs::path out(common.out);

  if (!fr.converged) {
    const auto doc = ltrc::fit_document(fr, nullptr, loaded.covariate_names, ltrc::parse_transform(in.transform),
                                        cfg, knots == "cv" ? &sel : nullptr);
    ltrc::write_text_file((out / "fit.json").string(), doc.dump(2) + "\n");
    std::cerr << "no start converged (best score max-norm " << fr.score_norm << ", " << fr.starts.size()
              << " starts); see fit.json\n";
    return kExitNotConverged;
  }

  const ltrc::InferenceReport inf = ltrc::infer(fr.theta_hat, loaded.data, fr.basis, fr.hessian);
  std::ostringstream coef;
  ltrc::write_coefficients(coef, loaded.covariate_names, inf);
  ltrc::write_text_file((out / "coefficients.csv").string(), coef.str());

  const auto doc = ltrc::fit_document(fr, &inf, loaded.covariate_names, ltrc::parse_transform(in.transform), cfg,
                                      knots == "cv" ? &sel : nullptr);
  ltrc::write_text_file((out / "fit.json").string(), doc.dump(2) + "\n");

  std::ostringstream curve;
  ltrc::write_curve(curve, fr.basis, fr.theta_hat.gamma);
  ltrc::write_text_file((out / "curve.csv").string(), curve.str());

  std::cout << "n=" << loaded.data.size() << " interior_knots=" << n_interior
            << " loglik=" << ltrc::format_fixed(fr.loglik, 10) << " converged_starts=" << fr.converged_starts
            << "/" << fr.starts.size() << "\n";
  std::cout << coef.str();
  for (const auto& note : inf.notes) std::cerr << "note: " << note << '\n';
  return 0;
}

int cmd_cv(const InputOptions& in, const CommonOptions& common, const std::string& candidates, int folds) {
  const ltrc::LoadedData loaded = load(in);
  const ltrc::KnotSelection sel =
      ltrc::select_knots_detailed(loaded.data, candidate_range(candidates), folds, fit_config(common));
  print_selection(sel);
  fs::create_directories(common.out);
  std::ostringstream table;
  ltrc::write_cv_table(table, sel);
  ltrc::write_text_file((fs::path(common.out) / "cv.csv").string(), table.str());
  return 0;
}

int cmd_simulate(const std::string& law, int n, int reps, const std::string& knots, const CommonOptions& common,
                 int curve_sample) {
  ltrc::SimScenario sc;
  sc.law = ltrc::parse_error_law(law);
  sc.n = n;
  sc.reps = reps;
  sc.seed = common.seed;
  sc.threads = common.threads;
  sc.fit.n_starts = common.starts;
  if (knots == "table") {
    sc.knots = ltrc::table_knots(sc.law, n);
  } else if (knots != "cv") {
    sc.knots = std::stoi(knots);
  }
  const ltrc::SimReport rep = ltrc::run_study(sc);

  fs::create_directories(common.out);
  const fs::path out(common.out);
  std::ostringstream metrics;
  ltrc::write_metrics(metrics, rep);
  ltrc::write_text_file((out / "metrics.csv").string(), metrics.str());
  std::ostringstream curves;
  ltrc::write_sim_curves(curves, rep, static_cast<std::size_t>(curve_sample));
  ltrc::write_text_file((out / "curves.csv").string(), curves.str());
  ltrc::write_text_file((out / "simulation.json").string(), ltrc::sim_document(rep).dump(2) + "\n");
  std::cout << metrics.str();
  return rep.reps_used > 0 ? 0 : kExitNotConverged;
}

int cmd_generate(const std::string& law, int n, std::uint64_t seed, const std::string& path) {
  std::ostringstream os;
  if (law == "application") {
    const ltrc::ApplicationLikeData app = ltrc::simulate_application_like(n, seed);
    ltrc::write_dataset(os, app.data, app.names);
  } else {
    ltrc::SimScenario sc;
    sc.law = ltrc::parse_error_law(law);
    sc.n = n;
    sc.seed = seed;
    ltrc::Rng rng = ltrc::make_rng(seed, 0);
    const ltrc::SimulatedData sim = ltrc::simulate_dataset(sc, rng);
    ltrc::write_dataset(os, sim.data, ltrc::default_covariate_names(2));
  }
  if (path == "-") {
    std::cout << os.str();
  } else {
    ltrc::write_text_file(path, os.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sieve maximum likelihood for left-truncated, right-censored linear regression"};
  app.require_subcommand(1);

  InputOptions in;
  CommonOptions common;
  std::string knots = "cv";
  std::string candidates = "0-5";
  int folds = 5;

  auto* fit = app.add_subcommand("fit", "Fit the model and write coefficient, fit and curve files");
  add_input_options(fit, in);
  add_common_options(fit, common);
  fit->add_option("--knots", knots, "Interior knot count, or 'cv'")->capture_default_str();
  fit->add_option("--candidates", candidates, "Knot counts tried by cv, e.g. 0-5 or 1,2,4")->capture_default_str();
  fit->add_option("--folds", folds, "Cross-validation folds")->capture_default_str()->check(CLI::Range(2, 100));

  auto* cv = app.add_subcommand("cv", "Cross-validate the number of interior knots");
  add_input_options(cv, in);
  add_common_options(cv, common);
  cv->add_option("--candidates", candidates, "Knot counts to compare")->capture_default_str();
  cv->add_option("--folds", folds, "Cross-validation folds")->capture_default_str()->check(CLI::Range(2, 100));

  std::string law = "normal";
  int n = 200;
  int reps = 200;
  std::string sim_knots = "table";
  int curve_sample = 20;
  auto* sim = app.add_subcommand("simulate", "Run the simulation study for one error law and sample size");
  add_common_options(sim, common);
  sim->add_option("--error", law, "normal, gumbel, mix_wide, mix_shift or gumbel_min")
      ->check(CLI::IsMember({"normal", "gumbel", "mix_wide", "mix_shift", "gumbel_min"}))
      ->capture_default_str();
  sim->add_option("--n", n, "Sample size")->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--reps", reps, "Replications")->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--knots", sim_knots, "Interior knots: a count, 'table' or 'cv'")->capture_default_str();
  sim->add_option("--curve-sample", curve_sample, "Replication curves written to curves.csv")
      ->capture_default_str();

  std::string gen_law = "application";
  std::uint64_t gen_seed = 1;
  std::string gen_out = "-";
  int gen_n = 349;
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
  gen->add_option("--error", gen_law, "An error law, or 'application' for the five-covariate design")
      ->capture_default_str();
  gen->add_option("--n", gen_n, "Rows kept after truncation")->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--seed", gen_seed, "Random seed")->capture_default_str();
  gen->add_option("--out,-o", gen_out, "Output file, or - for stdout")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fit) return cmd_fit(in, common, knots, candidates, folds);
    if (*cv) return cmd_cv(in, common, candidates, folds);
    if (*sim) return cmd_simulate(law, n, reps, sim_knots, common, curve_sample);
    if (*gen) return cmd_generate(gen_law, gen_n, gen_seed, gen_out);
  } catch (const ltrc::InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return 0;
}
