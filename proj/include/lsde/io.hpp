#pragma once

#include <string>

#include "json.hpp"
#include "lsde/learning.hpp"
#include "lsde/systems.hpp"

namespace lsde {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Canonical text: sorted keys, two-space indent, shortest round-trip doubles,
/// trailing newline.
std::string dump_canonical(const json& j);
json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

json to_json(const Vec& v);
json to_json(const Mat& m);  // array of rows
json to_json(const std::vector<Vec>& vs);
json to_json(const std::vector<Mat>& ms);

/// Parsers that check shapes and name the offending field in the error.
Vec vec_from_json(const json& j, const std::string& field, Eigen::Index size = -1);
Mat mat_from_json(const json& j, const std::string& field, Eigen::Index rows = -1, Eigen::Index cols = -1);

json to_json(const TrialData& trial);
TrialData trial_from_json(const json& j, ObservationKind kind, double t0, double t_end, const std::string& field);

/// {schema_version, protocol, seed, span, observation_kind, trials, truth?}.
/// True paths live in truth.true_paths, one {times, x} per trial.
json to_json(const Dataset& ds);
Dataset dataset_from_json(const json& j);

json to_json(const ObservationModel& map);
ObservationModel output_map_from_json(const json& j, const std::string& field = "output_map");

/// Every FitConfig field. Parsing accepts a subset (missing fields keep their
/// defaults) and rejects unknown keys.
json to_json(const FitConfig& config);
FitConfig config_from_json(const json& j);

/// {variant, kernel {signal_var, lengthscales}, Z, m_u, S_u, s, alpha, J} or
/// {variant: "linear", A, b}.
json dynamics_to_json(const FitResult& fit);

/// Fit report without wall-clock timings.
json to_json(const FitReport& report);
FitReport report_from_json(const json& j);

/// Posterior moments of one trial on its grid plus the initial state.
json to_json(const TrialPosterior& post);
TrialPosterior posterior_from_json(const json& j, const std::string& field);

struct Checkpoint {
  FitConfig config;
  FitResult fit;
};

json to_json(const Checkpoint& cp);
Checkpoint checkpoint_from_json(const json& j);

}  // namespace lsde
