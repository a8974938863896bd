// Command-line front end: prior constants, exploration runs, map evaluation,
// the signed-divergence curve, frontier dumps and batch reports.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "sirenmap/belief_update.hpp"
#include "sirenmap/errors.hpp"
#include "sirenmap/experiment.hpp"
#include "sirenmap/layer_io.hpp"
#include "sirenmap/stats.hpp"
#include "sirenmap/uncertainty.hpp"

namespace fs = std::filesystem;
using namespace sirenmap;

namespace {

int fail(std::string_view kind, std::string_view message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << "\n";
  return 2;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

PriorConstants prior_from(const std::vector<double>& sigma_max, const std::vector<double>& s, double kappa) {
  if (sigma_max.size() != s.size()) throw InvalidArgument("--sigma-max and --s need the same number of entries");
  return derive_prior({to_vector(sigma_max), RectangleSpec(to_vector(s)), kappa});
}

nlohmann::json prior_json(const PriorConstants& p) {
  return {{"beta", p.beta},
          {"ell_beta", p.ell_beta},
          {"a", p.a},
          {"U_beta", p.U_beta},
          {"sigma_tilde_max", p.sigma_tilde_max}};
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") std::cout << text;
  else write_file_atomic(out, text);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dispersion-probability mapping, uncertainty frontiers and SiREn exploration experiments"};
  app.require_subcommand(1);

  // prior
  auto* prior_cmd = app.add_subcommand("prior", "Derive beta, ell_beta, a, U_beta and sigma~_max");
  std::vector<double> pr_sigma{2, 2, 0.02}, pr_s{0.1, 0.1, 0.002};
  double pr_kappa = 0.5;
  prior_cmd->add_option("--sigma-max", pr_sigma, "Per-axis maximum standard deviation")->delimiter(',');
  prior_cmd->add_option("--s", pr_s, "Rectangle side lengths")->delimiter(',');
  prior_cmd->add_option("--kappa", pr_kappa, "Blend rate");

  // run
  auto* run_cmd = app.add_subcommand("run", "Run exploration experiments");
  std::string run_config, run_out = "runs";
  std::string run_fixture, run_layout;
  int run_pps = 0, run_repeats = 0, run_cap = 0;
  long long run_seed = -1;
  double run_sigma = 0.0, run_th = 0.0;
  bool run_override = false;
  unsigned run_workers = 0;
  run_cmd->add_option("--config", run_config, "Key-value config file");
  run_cmd->add_option("--fixture", run_fixture, "World fixture name (corridor, warehouse)");
  run_cmd->add_option("--layout", run_layout, "Layout L1..L4");
  run_cmd->add_option("--pps", run_pps, "Path planning system 1..4");
  run_cmd->add_option("--repeats", run_repeats, "Seeds per configuration");
  run_cmd->add_option("--seed", run_seed, "First seed");
  run_cmd->add_option("--sigma-max", run_sigma, "Reference sigma (m)");
  run_cmd->add_flag("--sigma-max-override", run_override, "Allow a non-default sigma_max for PPS3/PPS4");
  run_cmd->add_option("--T-h", run_th, "Frontier threshold (m)");
  run_cmd->add_option("--iteration-cap", run_cap, "Control steps per run");
  run_cmd->add_option("--workers", run_workers, "Parallel runs (0 = hardware threads)");
  run_cmd->add_option("--out", run_out, "Output directory");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Recompute SiREn and frontier counts from saved layers");
  std::string ev_dp, ev_occ;
  std::vector<double> ev_sigma{1.0, 1.0}, ev_s{0.1, 0.1};
  double ev_th = 0.2, ev_kappa = 0.5;
  std::string ev_mode = "dp";
  eval_cmd->add_option("--dp", ev_dp, "DP layer base path")->required();
  eval_cmd->add_option("--occupancy", ev_occ, "Occupancy layer base path");
  eval_cmd->add_option("--sigma-max", ev_sigma, "Per-axis maximum sigma")->delimiter(',');
  eval_cmd->add_option("--s", ev_s, "Rectangle sides")->delimiter(',');
  eval_cmd->add_option("--kappa", ev_kappa, "Blend rate");
  eval_cmd->add_option("--T-h", ev_th, "Frontier threshold (m)");
  eval_cmd->add_option("--mode", ev_mode, "dp or sigma")->check(CLI::IsMember({"dp", "sigma"}));

  // curve
  auto* curve_cmd = app.add_subcommand("curve", "Signed divergence curve against N(0, sigma_max^2)");
  double cu_sigma = 1.0;
  std::string cu_range = "0.1:3.0:0.01", cu_out;
  curve_cmd->add_option("--sigma-max", cu_sigma, "Reference sigma");
  curve_cmd->add_option("--range", cu_range, "lo:hi:step");
  curve_cmd->add_option("--out", cu_out, "CSV path (stdout if omitted)");

  // frontiers
  auto* fr_cmd = app.add_subcommand("frontiers", "Dump uncertainty and classical frontiers for a layer pair");
  std::string fr_dp, fr_occ, fr_out;
  std::vector<double> fr_sigma{1.0, 1.0}, fr_s{0.1, 0.1};
  double fr_th = 0.2, fr_clear = 0.5, fr_kappa = 0.5;
  std::size_t fr_min = 1;
  fr_cmd->add_option("--dp", fr_dp, "DP layer base path")->required();
  fr_cmd->add_option("--occupancy", fr_occ, "Occupancy layer base path")->required();
  fr_cmd->add_option("--sigma-max", fr_sigma, "Per-axis maximum sigma")->delimiter(',');
  fr_cmd->add_option("--s", fr_s, "Rectangle sides")->delimiter(',');
  fr_cmd->add_option("--kappa", fr_kappa, "Blend rate");
  fr_cmd->add_option("--T-h", fr_th, "Frontier threshold (m)");
  fr_cmd->add_option("--clearance", fr_clear, "Obstacle clearance (m)");
  fr_cmd->add_option("--min-cluster", fr_min, "Smallest reported cluster");
  fr_cmd->add_option("--out", fr_out, "JSON path (stdout if omitted)");

  // report
  auto* rep_cmd = app.add_subcommand("report", "Boxplot and landmark-UM regression CSVs from a batch summary");
  std::string rep_runs = "runs";
  rep_cmd->add_option("--runs", rep_runs, "Batch directory holding summary.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*prior_cmd) {
      std::cout << prior_json(prior_from(pr_sigma, pr_s, pr_kappa)).dump(2) << "\n";
    } else if (*run_cmd) {
      ScenarioConfig cfg;
      if (!run_config.empty()) cfg = parse_config(read_file(run_config));
      if (!run_fixture.empty()) cfg.world_fixture = run_fixture;
      if (!run_layout.empty()) cfg.layout = run_layout;
      if (run_cmd->count("--pps")) cfg.pps = run_pps;
      if (run_cmd->count("--repeats")) {
        cfg.repeats = run_repeats;
        cfg.seeds.clear();
      }
      if (run_cmd->count("--seed")) {
        cfg.seed = static_cast<std::uint64_t>(run_seed);
        cfg.seeds.clear();
      }
      if (run_cmd->count("--sigma-max")) cfg.sigma_max = run_sigma;
      if (run_override) cfg.sigma_max_override = true;
      if (run_cmd->count("--T-h")) cfg.T_h = run_th;
      if (run_cmd->count("--iteration-cap")) cfg.iteration_cap = run_cap;
      if (run_cmd->count("--workers")) cfg.workers = run_workers;
      const auto records = run_scenario(cfg);
      write_batch(records, run_out);
      nlohmann::json j = nlohmann::json::array();
      for (const auto& r : records)
        j.push_back({{"seed", r.seed},
                     {"stopping_reason", r.stopping_reason},
                     {"final_siren", r.final_siren},
                     {"coverage", r.coverage}});
      std::cout << j.dump() << "\n";
    } else if (*eval_cmd) {
      const auto prior = prior_from(ev_sigma, ev_s, ev_kappa);
      const GridLayer dp = load_layer(ev_dp);
      SirenParams sp = SirenParams::from_prior(
          prior, ev_mode == "dp" ? SirenMode::dp_approximation : SirenMode::closed_form_sigma);
      nlohmann::json j = {{"siren", to_json(siren(dp, prior, sp))}};
      if (!ev_occ.empty()) {
        const GridLayer occ = load_layer(ev_occ);
        FrontierParams fp = FrontierParams::from_prior(prior, ev_th);
        const auto fs = extract_frontiers(dp, occ, prior, fp);
        j["uf_clusters"] = fs.uf_clusters.size();
        j["cf_clusters"] = fs.cf_clusters.size();
      }
      std::cout << j.dump(2) << "\n";
    } else if (*curve_cmd) {
      std::vector<double> parts;
      std::stringstream ss(cu_range);
      std::string item;
      while (std::getline(ss, item, ':')) parts.push_back(std::stod(item));
      if (parts.size() != 3) throw InvalidArgument("--range must be lo:hi:step");
      emit(curve_csv(siren_curve(sigma_range(parts[0], parts[1], parts[2]), cu_sigma)), cu_out);
    } else if (*fr_cmd) {
      const auto prior = prior_from(fr_sigma, fr_s, fr_kappa);
      const GridLayer dp = load_layer(fr_dp);
      const GridLayer occ = load_layer(fr_occ);
      FrontierParams fp = FrontierParams::from_prior(prior, fr_th);
      fp.obstacle_clearance = fr_clear;
      fp.min_cluster_size = fr_min;
      emit(to_json(extract_frontiers(dp, occ, prior, fp), dp.geometry).dump(2) + "\n", fr_out);
    } else if (*rep_cmd) {
      const std::string text = read_file(fs::path(rep_runs) / "summary.csv");
      std::istringstream in(text);
      std::string line;
      std::getline(in, line);
      const auto header = split_csv_line(line);
      auto col = [&](const char* name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw MalformedFile(std::string("summary.csv lacks column ") + name);
        return static_cast<std::size_t>(it - header.begin());
      };
      const auto c_layout = col("layout"), c_pps = col("pps"), c_reason = col("stopping_reason"),
                 c_siren = col("final_siren"), c_lm = col("median_landmark_sigma"), c_um = col("median_um");
      std::map<GroupKey, std::vector<double>> groups;
      std::vector<double> x, y;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != header.size()) throw MalformedFile("ragged summary.csv row");
        if (f[c_reason] == "error") continue;
        const int pps = std::stoi(f[c_pps]);
        groups[{f[c_layout], pps}].push_back(std::stod(f[c_siren]));
        if (pps >= 3 && f[c_lm] != "nan" && f[c_um] != "nan") {
          x.push_back(std::stod(f[c_lm]));
          y.push_back(std::stod(f[c_um]));
        }
      }
      if (groups.empty()) throw EmptyGroup("summary.csv holds no completed runs");
      std::map<GroupKey, BoxStats> table;
      for (const auto& [k, v] : groups) table[k] = box_stats(v);
      write_file_atomic(fs::path(rep_runs) / "boxplot.csv", boxplot_csv(table));
      nlohmann::json j = {{"groups", table.size()}};
      if (x.size() >= 3) {
        const auto fit = linear_fit(x, y);
        write_file_atomic(fs::path(rep_runs) / "regression.csv", regression_csv(fit));
        j["regression"] = {{"slope", fit.slope}, {"intercept", fit.intercept}, {"pearson_r", fit.pearson_r},
                           {"n", fit.n}};
      }
      std::cout << j.dump(2) << "\n";
    }
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
