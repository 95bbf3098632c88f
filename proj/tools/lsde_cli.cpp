#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "lsde/evaluation.hpp"
#include "lsde/io.hpp"

using namespace lsde;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kInputError = 2;
constexpr int kNotConverged = 3;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

GridAxis parse_axis(const std::string& spec) {
  std::stringstream ss(spec);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, ',')) parts.push_back(part);
  if (parts.size() != 3) throw InvalidArgument("grid '" + spec + "' must be \"min,max,n\"");
  GridAxis a;
  try {
    std::size_t used = 0;
    a.lo = std::stod(parts[0], &used);
    if (used != parts[0].size()) throw std::invalid_argument("");
    a.hi = std::stod(parts[1], &used);
    if (used != parts[1].size()) throw std::invalid_argument("");
    a.n = std::stoi(parts[2], &used);
    if (used != parts[2].size()) throw std::invalid_argument("");
  } catch (const std::logic_error&) {
    throw InvalidArgument("grid '" + spec + "' must be \"min,max,n\" with numeric entries");
  }
  if (a.n < 1 || !(a.hi >= a.lo)) throw InvalidArgument("grid '" + spec + "' needs max >= min and n >= 1");
  return a;
}

std::filesystem::path companion_json(const std::string& csv) {
  std::filesystem::path p(csv);
  p.replace_extension(".json");
  if (p == std::filesystem::path(csv)) p += ".fixed_points.json";
  return p;
}

int cmd_simulate(const std::string& protocol, std::uint64_t seed, const std::string& out) {
  const auto names = protocol_names();
  if (std::find(names.begin(), names.end(), protocol) == names.end())
    throw InvalidArgument("unknown protocol '" + protocol + "'");
  const Dataset ds = make_dataset(protocol, seed);
  write_text_file(out, dump_canonical(to_json(ds)));
  std::cout << "wrote " << ds.trials.size() << " trials to " << out << "\n";
  return kOk;
}

int cmd_fit(const std::string& data_path, const std::string& config_path, const std::string& out) {
  const Dataset ds = dataset_from_json(read_json_file(data_path));
  FitConfig config = config_path.empty() ? FitConfig{} : config_from_json(read_json_file(config_path));
  ObservationModel map;
  if (ds.truth) {
    map = ds.truth->map;
  } else if (ds.kind == ObservationKind::Gaussian) {
    map = pca_output_map(ds.trials, config.latent_dim, config.noise_floor);
  } else {
    throw InvalidArgument("point-process fits need an initial output map; the dataset has no truth block");
  }
  if (map.C.cols() != config.latent_dim)
    throw InvalidArgument("config latent_dim " + std::to_string(config.latent_dim) +
                          " does not match the dataset's latent dimension " + std::to_string(map.C.cols()));
  const FitResult fit = lsde::fit(ds.trials, map, config, [](int it, double F) {
    std::cout << "iteration " << it << " F* " << fmt(F) << "\n" << std::flush;
  });
  write_text_file(out, dump_canonical(to_json(Checkpoint{config, fit})));
  std::cout << (fit.report.converged ? "converged" : "not converged") << " after " << fit.report.iterations
            << " iterations; checkpoint written to " << out << "\n";
  return fit.report.converged ? kOk : kNotConverged;
}

int cmd_portrait(const std::string& ckpt_path, const std::vector<std::string>& grids, const std::string& out) {
  std::vector<GridAxis> axes;
  for (const auto& g : grids) axes.push_back(parse_axis(g));
  const Checkpoint cp = checkpoint_from_json(read_json_file(ckpt_path));
  const Portrait p = portrait(cp.fit, axes);
  const Eigen::Index K = p.points.cols();
  std::ostringstream csv;
  for (Eigen::Index k = 0; k < K; ++k) csv << (k ? "," : "") << "x" << k + 1;
  for (Eigen::Index k = 0; k < K; ++k) csv << ",f_mean_" << k + 1;
  for (Eigen::Index k = 0; k < K; ++k) csv << ",f_var_" << k + 1;
  csv << "\n";
  for (Eigen::Index r = 0; r < p.points.rows(); ++r) {
    for (Eigen::Index k = 0; k < K; ++k) csv << (k ? "," : "") << fmt(p.points(r, k));
    for (Eigen::Index k = 0; k < K; ++k) csv << "," << fmt(p.mean(r, k));
    for (Eigen::Index k = 0; k < K; ++k) csv << "," << fmt(p.var(r, k));
    csv << "\n";
  }
  const auto fps = fit_fixed_points(cp.fit);
  const auto kept = retained_mask(fps);
  json fj = json::array();
  for (std::size_t i = 0; i < fps.size(); ++i)
    fj.push_back({{"s", to_json(fps[i].location)},
                  {"alpha", fps[i].alpha},
                  {"J", to_json(fps[i].jacobian)},
                  {"eigenvalues", {{"re", to_json(fps[i].eig_re)}, {"im", to_json(fps[i].eig_im)}}},
                  {"stability", fps[i].stable ? "stable" : "unstable"},
                  {"retained", static_cast<bool>(kept[i])}});
  const auto json_path = companion_json(out);
  write_text_file(out, csv.str());
  write_text_file(json_path.string(), dump_canonical(json{{"fixed_points", fj}}));
  std::cout << "wrote " << p.points.rows() << " rows to " << out << " and fixed points to " << json_path.string()
            << "\n";
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path) {
  const Dataset ds = dataset_from_json(read_json_file(data_path));
  if (!ds.truth) throw InvalidArgument("dataset '" + data_path + "' has no truth block");
  const Checkpoint cp = checkpoint_from_json(read_json_file(ckpt_path));
  if (cp.fit.posteriors.size() != ds.trials.size())
    throw InvalidArgument("checkpoint and dataset have different trial counts");
  if (cp.config.latent_dim != ds.truth->drift.dim())
    throw InvalidArgument("checkpoint latent dimension does not match the dataset truth");
  std::cout << dump_canonical(to_json(evaluate_fit(cp.fit, ds)));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent SDE learning with fixed-point conditioned GP drifts"};
  app.require_subcommand(1);

  std::string protocol, out, data, config, checkpoint;
  std::uint64_t seed = 0;
  std::vector<std::string> grids;

  auto* sim = app.add_subcommand("simulate", "Generate a benchmark dataset");
  sim->add_option("--protocol", protocol, "double_well | van_der_pol | neural_pop_A | neural_pop_B | chemical")->required();
  sim->add_option("--seed", seed, "Master seed")->required();
  sim->add_option("--out", out, "Output dataset JSON")->required();

  auto* fit = app.add_subcommand("fit", "Fit a model to a dataset");
  fit->add_option("--data", data, "Dataset JSON")->required();
  fit->add_option("--config", config, "FitConfig JSON");
  fit->add_option("--out-checkpoint", out, "Output checkpoint JSON")->required();

  auto* por = app.add_subcommand("portrait", "Export the learnt drift on a grid");
  por->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required();
  por->add_option("--grid", grids, "\"min,max,n\" per latent dimension")->required();
  por->add_option("--out", out, "Output CSV; fixed points go to the .json sibling")->required();

  auto* ev = app.add_subcommand("eval", "Compare a fit with the dataset's ground truth");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required();
  ev->add_option("--data", data, "Dataset JSON with a truth block")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputError;
  }

  try {
    if (sim->parsed()) return cmd_simulate(protocol, seed, out);
    if (fit->parsed()) return cmd_fit(data, config, out);
    if (por->parsed()) return cmd_portrait(checkpoint, grids, out);
    if (ev->parsed()) return cmd_eval(checkpoint, data);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const OutOfRange& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kInputError;
}
