#include "lsde/io.hpp"

#include <fstream>
#include <sstream>

namespace lsde {

namespace {

std::string sub(const std::string& where, const std::string& key) { return where.empty() ? key : where + "." + key; }
std::string idx(const std::string& where, std::size_t i) { return where + "[" + std::to_string(i) + "]"; }

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw InvalidArgument("schema: field '" + field + "' " + what);
}

const json& need(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object()) fail(where, "must be an object");
  const auto it = j.find(key);
  if (it == j.end()) fail(sub(where, key), "is missing");
  return *it;
}

double num(const json& j, const std::string& field) {
  if (!j.is_number()) fail(field, "must be a number");
  return j.get<double>();
}

long long integer(const json& j, const std::string& field) {
  if (!j.is_number_integer()) fail(field, "must be an integer");
  return j.get<long long>();
}

std::uint64_t unsigned_integer(const json& j, const std::string& field) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0))
    fail(field, "must be a nonnegative integer");
  return j.get<std::uint64_t>();
}

bool boolean(const json& j, const std::string& field) {
  if (!j.is_boolean()) fail(field, "must be a boolean");
  return j.get<bool>();
}

std::string str(const json& j, const std::string& field) {
  if (!j.is_string()) fail(field, "must be a string");
  return j.get<std::string>();
}

const json& arr(const json& j, const std::string& field) {
  if (!j.is_array()) fail(field, "must be an array");
  return j;
}

std::vector<double> doubles(const json& j, const std::string& field) {
  std::vector<double> out;
  for (std::size_t i = 0; i < arr(j, field).size(); ++i) out.push_back(num(j[i], idx(field, i)));
  return out;
}

std::vector<Mat> mats(const json& j, const std::string& field, std::size_t count, Eigen::Index rows, Eigen::Index cols) {
  if (arr(j, field).size() != count) fail(field, "must have " + std::to_string(count) + " entries");
  std::vector<Mat> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(mat_from_json(j[i], idx(field, i), rows, cols));
  return out;
}

std::vector<Vec> vecs(const json& j, const std::string& field, std::size_t count, Eigen::Index size) {
  if (arr(j, field).size() != count) fail(field, "must have " + std::to_string(count) + " entries");
  std::vector<Vec> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(vec_from_json(j[i], idx(field, i), size));
  return out;
}

std::string kind_name(ObservationKind k) { return k == ObservationKind::Gaussian ? "gaussian" : "point_process"; }

ObservationKind kind_from(const json& j, const std::string& field) {
  const std::string s = str(j, field);
  if (s == "gaussian") return ObservationKind::Gaussian;
  if (s == "point_process") return ObservationKind::PointProcess;
  fail(field, "must be \"gaussian\" or \"point_process\"");
}

void reject_unknown(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) fail(sub(where, key), "is not a known field");
}

void check_schema_version(const json& j) {
  if (integer(need(j, "schema_version", ""), "schema_version") != kSchemaVersion)
    fail("schema_version", "must be " + std::to_string(kSchemaVersion));
}

}  // namespace

std::string dump_canonical(const json& j) { return j.dump(2) + "\n"; }

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  out << text;
  if (!out) throw InvalidArgument("failed writing '" + path + "'");
}

json to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(to_json(Vec(m.row(i).transpose())));
  return rows;
}

json to_json(const std::vector<Vec>& vs) {
  json out = json::array();
  for (const auto& v : vs) out.push_back(to_json(v));
  return out;
}

json to_json(const std::vector<Mat>& ms) {
  json out = json::array();
  for (const auto& m : ms) out.push_back(to_json(m));
  return out;
}

Vec vec_from_json(const json& j, const std::string& field, Eigen::Index size) {
  const auto v = doubles(j, field);
  if (size >= 0 && static_cast<Eigen::Index>(v.size()) != size) fail(field, "must have length " + std::to_string(size));
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Mat mat_from_json(const json& j, const std::string& field, Eigen::Index rows, Eigen::Index cols) {
  arr(j, field);
  const auto r = static_cast<Eigen::Index>(j.size());
  if (rows >= 0 && r != rows) fail(field, "must have " + std::to_string(rows) + " rows");
  Eigen::Index c = cols;
  std::vector<Vec> parsed;
  for (std::size_t i = 0; i < j.size(); ++i) {
    parsed.push_back(vec_from_json(j[i], idx(field, i)));
    if (c < 0) c = parsed.back().size();
    if (parsed.back().size() != c) fail(idx(field, i), "must have length " + std::to_string(c));
  }
  Mat m(r, std::max<Eigen::Index>(c, 0));
  for (Eigen::Index i = 0; i < r; ++i) m.row(i) = parsed[static_cast<std::size_t>(i)].transpose();
  return m;
}

json to_json(const TrialData& trial) {
  json j;
  if (trial.kind == ObservationKind::Gaussian) {
    j["times"] = trial.times;
    j["Y"] = to_json(trial.Y);
  } else {
    j["events"] = trial.events;
  }
  return j;
}

TrialData trial_from_json(const json& j, ObservationKind kind, double t0, double t_end, const std::string& field) {
  TrialData tr;
  tr.kind = kind;
  tr.t0 = t0;
  tr.t_end = t_end;
  if (kind == ObservationKind::Gaussian) {
    reject_unknown(j, {"times", "Y"}, field);
    tr.times = doubles(need(j, "times", field), sub(field, "times"));
    const json& Y = need(j, "Y", field);
    tr.Y = mat_from_json(Y, sub(field, "Y"), -1, static_cast<Eigen::Index>(tr.times.size()));
  } else {
    reject_unknown(j, {"events"}, field);
    const json& ev = arr(need(j, "events", field), sub(field, "events"));
    for (std::size_t n = 0; n < ev.size(); ++n) tr.events.push_back(doubles(ev[n], idx(sub(field, "events"), n)));
  }
  try {
    tr.validate();
  } catch (const std::exception& e) {
    fail(field, std::string("is invalid: ") + e.what());
  }
  return tr;
}

json to_json(const Dataset& ds) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["protocol"] = ds.protocol;
  j["seed"] = ds.seed;
  j["span"] = {ds.t0, ds.t_end};
  j["observation_kind"] = kind_name(ds.kind);
  j["trials"] = json::array();
  for (const auto& tr : ds.trials) j["trials"].push_back(to_json(tr));
  if (ds.truth) {
    json t;
    t["drift_name"] = ds.truth->drift.name;
    t["params"] = ds.truth->drift.params;
    t["C"] = to_json(ds.truth->map.C);
    t["d"] = to_json(ds.truth->map.d);
    if (ds.kind == ObservationKind::Gaussian) t["Gamma"] = to_json(ds.truth->map.Gamma);
    t["sim_step"] = ds.truth->sim_step;
    t["true_paths"] = json::array();
    for (const auto& tr : ds.trials) t["true_paths"].push_back({{"times", tr.true_times}, {"x", to_json(tr.true_path)}});
    j["truth"] = t;
  }
  return j;
}

Dataset dataset_from_json(const json& j) {
  reject_unknown(j, {"schema_version", "protocol", "seed", "span", "observation_kind", "trials", "truth"}, "");
  check_schema_version(j);
  Dataset ds;
  ds.protocol = str(need(j, "protocol", ""), "protocol");
  ds.seed = unsigned_integer(need(j, "seed", ""), "seed");
  const Vec span = vec_from_json(need(j, "span", ""), "span", 2);
  ds.t0 = span[0];
  ds.t_end = span[1];
  if (!(ds.t_end > ds.t0)) fail("span", "must be increasing");
  ds.kind = kind_from(need(j, "observation_kind", ""), "observation_kind");
  const json& trials = arr(need(j, "trials", ""), "trials");
  if (trials.empty()) fail("trials", "must be nonempty");
  for (std::size_t i = 0; i < trials.size(); ++i)
    ds.trials.push_back(trial_from_json(trials[i], ds.kind, ds.t0, ds.t_end, idx("trials", i)));
  const Eigen::Index N = ds.trials.front().num_channels();
  for (std::size_t i = 0; i < ds.trials.size(); ++i)
    if (ds.trials[i].num_channels() != N) fail(idx("trials", i), "has a different channel count");

  if (j.contains("truth")) {
    const json& t = j["truth"];
    reject_unknown(t, {"drift_name", "params", "C", "d", "Gamma", "sim_step", "true_paths"}, "truth");
    Truth truth;
    truth.drift.name = str(need(t, "drift_name", "truth"), "truth.drift_name");
    const json& params = need(t, "params", "truth");
    if (!params.is_object()) fail("truth.params", "must be an object");
    for (const auto& [key, value] : params.items()) truth.drift.params[key] = num(value, "truth.params." + key);
    try {
      truth.drift.validate();
    } catch (const std::exception& e) {
      fail("truth.params", std::string("is invalid: ") + e.what());
    }
    const Eigen::Index K = truth.drift.dim();
    truth.map.kind = ds.kind;
    truth.map.C = mat_from_json(need(t, "C", "truth"), "truth.C", N, K);
    truth.map.d = vec_from_json(need(t, "d", "truth"), "truth.d", N);
    if (ds.kind == ObservationKind::Gaussian) truth.map.Gamma = vec_from_json(need(t, "Gamma", "truth"), "truth.Gamma", N);
    truth.sim_step = num(need(t, "sim_step", "truth"), "truth.sim_step");
    const json& paths = arr(need(t, "true_paths", "truth"), "truth.true_paths");
    if (paths.size() != ds.trials.size()) fail("truth.true_paths", "must have one entry per trial");
    for (std::size_t i = 0; i < paths.size(); ++i) {
      const std::string f = idx("truth.true_paths", i);
      auto& tr = ds.trials[i];
      tr.true_times = doubles(need(paths[i], "times", f), sub(f, "times"));
      const Mat X = mat_from_json(need(paths[i], "x", f), sub(f, "x"), static_cast<Eigen::Index>(tr.true_times.size()), K);
      for (Eigen::Index r = 0; r < X.rows(); ++r) tr.true_path.push_back(X.row(r).transpose());
    }
    ds.truth = truth;
  }
  return ds;
}

json to_json(const ObservationModel& map) {
  json j;
  j["kind"] = kind_name(map.kind);
  j["C"] = to_json(map.C);
  j["d"] = to_json(map.d);
  if (map.kind == ObservationKind::Gaussian) j["Gamma"] = to_json(map.Gamma);
  return j;
}

ObservationModel output_map_from_json(const json& j, const std::string& field) {
  reject_unknown(j, {"kind", "C", "d", "Gamma"}, field);
  ObservationModel m;
  m.kind = kind_from(need(j, "kind", field), sub(field, "kind"));
  m.C = mat_from_json(need(j, "C", field), sub(field, "C"));
  m.d = vec_from_json(need(j, "d", field), sub(field, "d"), m.C.rows());
  if (m.kind == ObservationKind::Gaussian)
    m.Gamma = vec_from_json(need(j, "Gamma", field), sub(field, "Gamma"), m.C.rows());
  try {
    m.validate();
  } catch (const std::exception& e) {
    fail(field, std::string("is invalid: ") + e.what());
  }
  return m;
}

json to_json(const FitConfig& c) {
  json j;
  j["variant"] = to_string(c.variant);
  j["latent_dim"] = c.latent_dim;
  j["num_fixed_points"] = c.num_fixed_points;
  j["inducing_per_dim"] = c.inducing_per_dim;
  j["inducing_lo"] = c.inducing_lo;
  j["inducing_hi"] = c.inducing_hi;
  j["fixed_point_init"] = c.fixed_point_init;
  j["signal_var"] = c.signal_var;
  j["lengthscale"] = c.lengthscale;
  j["initial_alpha"] = c.initial_alpha;
  j["dt"] = c.dt;
  j["outer_iters"] = c.outer_iters;
  j["tol"] = c.tol;
  j["smooth"] = {{"tol", c.smooth.tol}, {"max_iters", c.smooth.max_iters}, {"max_backtracks", c.smooth.max_backtracks}};
  j["hyperopt"] = {{"steps", c.hyperopt.steps},
                   {"fd_step", c.hyperopt.fd_step},
                   {"initial_step", c.hyperopt.initial_step},
                   {"max_backtracks", c.hyperopt.max_backtracks},
                   {"kernel", c.hyperopt.kernel},
                   {"locations", c.hyperopt.locations},
                   {"alphas", c.hyperopt.alphas}};
  j["quadrature"] = to_string(c.quadrature);
  j["seed"] = c.seed;
  j["freeze_output_map"] = c.freeze_output_map;
  j["freeze_noise"] = c.freeze_noise;
  j["noise_floor"] = c.noise_floor;
  j["threads"] = c.threads;
  j["verbose"] = c.verbose;
  return j;
}

FitConfig config_from_json(const json& j) {
  const std::string w = "config";
  if (!j.is_object()) fail(w, "must be an object");
  reject_unknown(j,
                 {"variant", "latent_dim", "num_fixed_points", "inducing_per_dim", "inducing_lo", "inducing_hi",
                  "fixed_point_init", "signal_var", "lengthscale", "initial_alpha", "dt", "outer_iters", "tol", "smooth",
                  "hyperopt", "quadrature", "seed", "freeze_output_map", "freeze_noise", "noise_floor", "threads",
                  "verbose"},
                 w);
  FitConfig c;
  auto has = [&](const char* k) { return j.contains(k); };
  try {
    if (has("variant")) c.variant = parse_variant(str(j["variant"], sub(w, "variant")));
    if (has("quadrature")) c.quadrature = parse_quadrature(str(j["quadrature"], sub(w, "quadrature")));
  } catch (const InvalidArgument& e) {
    fail(w, e.what());
  }
  if (has("latent_dim")) c.latent_dim = integer(j["latent_dim"], sub(w, "latent_dim"));
  if (has("num_fixed_points")) c.num_fixed_points = integer(j["num_fixed_points"], sub(w, "num_fixed_points"));
  if (has("inducing_per_dim")) {
    c.inducing_per_dim.clear();
    const json& a = arr(j["inducing_per_dim"], sub(w, "inducing_per_dim"));
    for (std::size_t i = 0; i < a.size(); ++i)
      c.inducing_per_dim.push_back(static_cast<int>(integer(a[i], idx(sub(w, "inducing_per_dim"), i))));
  }
  if (has("inducing_lo")) c.inducing_lo = doubles(j["inducing_lo"], sub(w, "inducing_lo"));
  if (has("inducing_hi")) c.inducing_hi = doubles(j["inducing_hi"], sub(w, "inducing_hi"));
  if (has("fixed_point_init")) c.fixed_point_init = doubles(j["fixed_point_init"], sub(w, "fixed_point_init"));
  if (has("signal_var")) c.signal_var = num(j["signal_var"], sub(w, "signal_var"));
  if (has("lengthscale")) c.lengthscale = num(j["lengthscale"], sub(w, "lengthscale"));
  if (has("initial_alpha")) c.initial_alpha = num(j["initial_alpha"], sub(w, "initial_alpha"));
  if (has("dt")) c.dt = num(j["dt"], sub(w, "dt"));
  if (has("outer_iters")) c.outer_iters = static_cast<int>(integer(j["outer_iters"], sub(w, "outer_iters")));
  if (has("tol")) c.tol = num(j["tol"], sub(w, "tol"));
  if (has("smooth")) {
    const json& s = j["smooth"];
    const std::string f = sub(w, "smooth");
    if (!s.is_object()) fail(f, "must be an object");
    reject_unknown(s, {"tol", "max_iters", "max_backtracks"}, f);
    if (s.contains("tol")) c.smooth.tol = num(s["tol"], sub(f, "tol"));
    if (s.contains("max_iters")) c.smooth.max_iters = static_cast<int>(integer(s["max_iters"], sub(f, "max_iters")));
    if (s.contains("max_backtracks"))
      c.smooth.max_backtracks = static_cast<int>(integer(s["max_backtracks"], sub(f, "max_backtracks")));
  }
  if (has("hyperopt")) {
    const json& h = j["hyperopt"];
    const std::string f = sub(w, "hyperopt");
    if (!h.is_object()) fail(f, "must be an object");
    reject_unknown(h, {"steps", "fd_step", "initial_step", "max_backtracks", "kernel", "locations", "alphas"}, f);
    if (h.contains("steps")) c.hyperopt.steps = static_cast<int>(integer(h["steps"], sub(f, "steps")));
    if (h.contains("fd_step")) c.hyperopt.fd_step = num(h["fd_step"], sub(f, "fd_step"));
    if (h.contains("initial_step")) c.hyperopt.initial_step = num(h["initial_step"], sub(f, "initial_step"));
    if (h.contains("max_backtracks"))
      c.hyperopt.max_backtracks = static_cast<int>(integer(h["max_backtracks"], sub(f, "max_backtracks")));
    if (h.contains("kernel")) c.hyperopt.kernel = boolean(h["kernel"], sub(f, "kernel"));
    if (h.contains("locations")) c.hyperopt.locations = boolean(h["locations"], sub(f, "locations"));
    if (h.contains("alphas")) c.hyperopt.alphas = boolean(h["alphas"], sub(f, "alphas"));
  }
  if (has("seed")) c.seed = unsigned_integer(j["seed"], sub(w, "seed"));
  if (has("freeze_output_map")) c.freeze_output_map = boolean(j["freeze_output_map"], sub(w, "freeze_output_map"));
  if (has("freeze_noise")) c.freeze_noise = boolean(j["freeze_noise"], sub(w, "freeze_noise"));
  if (has("noise_floor")) c.noise_floor = num(j["noise_floor"], sub(w, "noise_floor"));
  if (has("threads")) c.threads = static_cast<std::size_t>(unsigned_integer(j["threads"], sub(w, "threads")));
  if (has("verbose")) c.verbose = boolean(j["verbose"], sub(w, "verbose"));
  c.validate();
  return c;
}

json dynamics_to_json(const FitResult& fit) {
  json j;
  j["variant"] = to_string(fit.variant);
  if (fit.variant == DynamicsVariant::Linear) {
    j["A"] = to_json(fit.linear.A);
    j["b"] = to_json(fit.linear.b);
    return j;
  }
  const DynamicsModel& m = fit.dynamics;
  j["kernel"] = {{"signal_var", m.kernel().signal_var}, {"lengthscales", to_json(m.kernel().lengthscales)}};
  j["Z"] = to_json(m.inducing_locations());
  j["m_u"] = to_json(m.inducing_means());
  j["S_u"] = to_json(m.inducing_covs());
  j["s"] = to_json(m.fixed_points().locations);
  j["alpha"] = to_json(m.fixed_points().alphas);
  j["J"] = to_json(m.jacobians());
  return j;
}

namespace {

void dynamics_from_json(const json& j, FitResult& fit) {
  const std::string w = "dynamics";
  try {
    fit.variant = parse_variant(str(need(j, "variant", w), sub(w, "variant")));
  } catch (const InvalidArgument& e) {
    fail(sub(w, "variant"), e.what());
  }
  if (fit.variant == DynamicsVariant::Linear) {
    reject_unknown(j, {"variant", "A", "b"}, w);
    fit.linear.A = mat_from_json(need(j, "A", w), sub(w, "A"));
    if (fit.linear.A.rows() != fit.linear.A.cols()) fail(sub(w, "A"), "must be square");
    fit.linear.b = vec_from_json(need(j, "b", w), sub(w, "b"), fit.linear.A.rows());
    return;
  }
  reject_unknown(j, {"variant", "kernel", "Z", "m_u", "S_u", "s", "alpha", "J"}, w);
  const json& kj = need(j, "kernel", w);
  reject_unknown(kj, {"signal_var", "lengthscales"}, sub(w, "kernel"));
  KernelSpec kernel;
  kernel.signal_var = num(need(kj, "signal_var", sub(w, "kernel")), "dynamics.kernel.signal_var");
  kernel.lengthscales = vec_from_json(need(kj, "lengthscales", sub(w, "kernel")), "dynamics.kernel.lengthscales");
  const Eigen::Index K = kernel.dim();
  if (K == 0) fail("dynamics.kernel.lengthscales", "must be nonempty");
  const Mat Z = mat_from_json(need(j, "Z", w), sub(w, "Z"), -1, K);
  const Eigen::Index M = Z.rows();
  FixedPointSet fps;
  const json& sj = need(j, "s", w);
  fps.locations = arr(sj, sub(w, "s")).empty() ? Mat(0, K) : mat_from_json(sj, sub(w, "s"), -1, K);
  const Eigen::Index L = fps.locations.rows();
  fps.alphas = vec_from_json(need(j, "alpha", w), sub(w, "alpha"), L);
  try {
    fit.dynamics = DynamicsModel(kernel, Z, fps);
    fit.dynamics.set_inducing_means(vecs(need(j, "m_u", w), sub(w, "m_u"), static_cast<std::size_t>(K), M));
    fit.dynamics.set_inducing_covs(mats(need(j, "S_u", w), sub(w, "S_u"), static_cast<std::size_t>(K), M, M));
    fit.dynamics.set_jacobians(mats(need(j, "J", w), sub(w, "J"), static_cast<std::size_t>(L), K, K));
    fit.dynamics.build();
  } catch (const InvalidArgument& e) {
    fail(w, std::string("is invalid: ") + e.what());
  }
}

}  // namespace

json to_json(const FitReport& r) {
  json j;
  j["trace"] = r.trace;
  j["phases"] = json::array();
  for (const auto& p : r.phases)
    j["phases"].push_back({{"inference", p.inference},
                           {"dynamics", p.dynamics},
                           {"output_map", p.output_map},
                           {"hyperparameters", p.hyperparameters}});
  j["hyperopt_accepted"] = r.hyperopt_accepted;
  j["fixed_points"] = json::array();
  for (const auto& fp : r.fixed_points)
    j["fixed_points"].push_back({{"location", to_json(fp.location)},
                                 {"alpha", fp.alpha},
                                 {"jacobian", to_json(fp.jacobian)},
                                 {"eig_re", to_json(fp.eig_re)},
                                 {"eig_im", to_json(fp.eig_im)},
                                 {"stable", fp.stable}});
  j["grid_size"] = r.grid_size;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["unconverged_trials"] = r.unconverged_trials;
  return j;
}

FitReport report_from_json(const json& j) {
  const std::string w = "report";
  reject_unknown(j,
                 {"trace", "phases", "hyperopt_accepted", "fixed_points", "grid_size", "iterations", "converged",
                  "unconverged_trials"},
                 w);
  FitReport r;
  r.trace = doubles(need(j, "trace", w), sub(w, "trace"));
  const json& ph = arr(need(j, "phases", w), sub(w, "phases"));
  for (std::size_t i = 0; i < ph.size(); ++i) {
    const std::string f = idx(sub(w, "phases"), i);
    r.phases.push_back({num(need(ph[i], "inference", f), sub(f, "inference")),
                        num(need(ph[i], "dynamics", f), sub(f, "dynamics")),
                        num(need(ph[i], "output_map", f), sub(f, "output_map")),
                        num(need(ph[i], "hyperparameters", f), sub(f, "hyperparameters"))});
  }
  const json& ha = arr(need(j, "hyperopt_accepted", w), sub(w, "hyperopt_accepted"));
  for (std::size_t i = 0; i < ha.size(); ++i)
    r.hyperopt_accepted.push_back(static_cast<int>(integer(ha[i], idx(sub(w, "hyperopt_accepted"), i))));
  const json& fps = arr(need(j, "fixed_points", w), sub(w, "fixed_points"));
  for (std::size_t i = 0; i < fps.size(); ++i) {
    const std::string f = idx(sub(w, "fixed_points"), i);
    FixedPointSummary s;
    s.location = vec_from_json(need(fps[i], "location", f), sub(f, "location"));
    const Eigen::Index K = s.location.size();
    s.alpha = num(need(fps[i], "alpha", f), sub(f, "alpha"));
    s.jacobian = mat_from_json(need(fps[i], "jacobian", f), sub(f, "jacobian"), K, K);
    s.eig_re = vec_from_json(need(fps[i], "eig_re", f), sub(f, "eig_re"), K);
    s.eig_im = vec_from_json(need(fps[i], "eig_im", f), sub(f, "eig_im"), K);
    s.stable = boolean(need(fps[i], "stable", f), sub(f, "stable"));
    r.fixed_points.push_back(std::move(s));
  }
  r.grid_size = static_cast<std::size_t>(unsigned_integer(need(j, "grid_size", w), sub(w, "grid_size")));
  r.iterations = static_cast<int>(integer(need(j, "iterations", w), sub(w, "iterations")));
  r.converged = boolean(need(j, "converged", w), sub(w, "converged"));
  r.unconverged_trials = static_cast<int>(integer(need(j, "unconverged_trials", w), sub(w, "unconverged_trials")));
  return r;
}

json to_json(const TrialPosterior& post) {
  json j;
  const TimeGrid& g = post.path.grid;
  j["grid"] = {{"t0", g.t0()}, {"dt", g.dt()}, {"steps", g.steps()}};
  j["m"] = to_json(post.path.m);
  j["S"] = to_json(post.path.S);
  j["init"] = {{"mu0", to_json(post.init.mu0)},
               {"Sig0", to_json(post.init.Sig0)},
               {"m0", to_json(post.init.m0)},
               {"S0", to_json(post.init.S0)}};
  j["objective"] = {{"expected_ll", post.objective.expected_ll},
                    {"energy", post.objective.energy},
                    {"kl0", post.objective.kl0}};
  j["iterations"] = post.iterations;
  j["converged"] = post.converged;
  return j;
}

TrialPosterior posterior_from_json(const json& j, const std::string& field) {
  reject_unknown(j, {"grid", "m", "S", "init", "objective", "iterations", "converged"}, field);
  TrialPosterior p;
  const json& g = need(j, "grid", field);
  const std::string gf = sub(field, "grid");
  const double t0 = num(need(g, "t0", gf), sub(gf, "t0"));
  const double dt = num(need(g, "dt", gf), sub(gf, "dt"));
  const auto steps = unsigned_integer(need(g, "steps", gf), sub(gf, "steps"));
  if (!(dt > 0.0) || steps == 0) fail(gf, "must have positive dt and steps");
  p.path.grid = TimeGrid(t0, t0 + static_cast<double>(steps) * dt, dt);
  if (p.path.grid.steps() != steps) fail(gf, "does not reproduce its step count");
  const json& mj = arr(need(j, "m", field), sub(field, "m"));
  if (mj.size() != p.path.grid.size()) fail(sub(field, "m"), "must have one entry per grid point");
  const Eigen::Index K = mj.empty() ? 0 : static_cast<Eigen::Index>(mj[0].size());
  p.path.m = vecs(mj, sub(field, "m"), p.path.grid.size(), K);
  p.path.S = mats(need(j, "S", field), sub(field, "S"), p.path.grid.size(), K, K);
  const json& ij = need(j, "init", field);
  const std::string f = sub(field, "init");
  p.init.mu0 = vec_from_json(need(ij, "mu0", f), sub(f, "mu0"), K);
  p.init.Sig0 = mat_from_json(need(ij, "Sig0", f), sub(f, "Sig0"), K, K);
  p.init.m0 = vec_from_json(need(ij, "m0", f), sub(f, "m0"), K);
  p.init.S0 = mat_from_json(need(ij, "S0", f), sub(f, "S0"), K, K);
  const json& oj = need(j, "objective", field);
  const std::string of = sub(field, "objective");
  p.objective = {num(need(oj, "expected_ll", of), sub(of, "expected_ll")), num(need(oj, "energy", of), sub(of, "energy")),
                 num(need(oj, "kl0", of), sub(of, "kl0"))};
  p.iterations = static_cast<int>(integer(need(j, "iterations", field), sub(field, "iterations")));
  p.converged = boolean(need(j, "converged", field), sub(field, "converged"));
  return p;
}

json to_json(const Checkpoint& cp) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["config"] = to_json(cp.config);
  j["dynamics"] = dynamics_to_json(cp.fit);
  j["output_map"] = to_json(cp.fit.output_map);
  j["report"] = to_json(cp.fit.report);
  j["posteriors"] = json::array();
  for (const auto& p : cp.fit.posteriors) j["posteriors"].push_back(to_json(p));
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  reject_unknown(j, {"schema_version", "config", "dynamics", "output_map", "report", "posteriors"}, "");
  check_schema_version(j);
  Checkpoint cp;
  cp.config = config_from_json(need(j, "config", ""));
  dynamics_from_json(need(j, "dynamics", ""), cp.fit);
  if (cp.fit.variant != cp.config.variant) fail("dynamics.variant", "does not match config.variant");
  cp.fit.output_map = output_map_from_json(need(j, "output_map", ""));
  const Eigen::Index K = cp.config.latent_dim;
  const Eigen::Index model_dim = cp.fit.variant == DynamicsVariant::Linear ? cp.fit.linear.A.rows() : cp.fit.dynamics.dim();
  if (model_dim != K) fail("dynamics", "dimension does not match config.latent_dim");
  if (cp.fit.output_map.C.cols() != K) fail("output_map.C", "must have latent_dim columns");
  cp.fit.report = report_from_json(need(j, "report", ""));
  const json& ps = arr(need(j, "posteriors", ""), "posteriors");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    cp.fit.posteriors.push_back(posterior_from_json(ps[i], idx("posteriors", i)));
    if (cp.fit.posteriors.back().path.dim() != K) fail(idx("posteriors", i), "has the wrong latent dimension");
  }
  return cp;
}

}  // namespace lsde
