#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "nlcs/montecarlo.hpp"
#include "nlcs/steering.hpp"

namespace nlcs::io {

using json = nlohmann::json;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Shortest text that round-trips a double ("{:.17g}").
std::string num(double v);

json to_json(const MatX& m);
MatX matrix_from_json(const json& j);
json to_json(const Tensor666& t);
Tensor666 tensor_from_json(const json& j);

json to_json(const DiscretizedPlan& plan);
DiscretizedPlan plan_from_json(const json& j);
json to_json(const GCoefficients& g);
GCoefficients g_from_json(const json& j);

/// Policy plus its predicted statistics. Only the policy is read back.
json to_json(const SteeringSolution& sol, const SystemConstants& c);
struct Policy {
  ObjectiveKind kind = ObjectiveKind::MinNonlinearity;
  NormMode norm_mode = NormMode::Surrogate;
  std::vector<Vec3> u_bar;
  std::vector<Mat36> gains;
};
Policy policy_from_json(const json& j);

json to_json(const MonteCarloReport& rep, const SystemConstants& c);
/// Restores the per-node statistics and the Delta-v summary (terminal samples
/// are not stored).
MonteCarloReport report_from_json(const json& j, const SystemConstants& c);

json read_json(const std::filesystem::path& path);
/// Writes through a temporary file and rename.
void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const json& j);

}  // namespace nlcs::io
