#include <algorithm>
#include <cmath>
#include <string>

#include "mece/error.h"
#include "mece/rng.h"
#include "mece/sim2d.h"

namespace mece {

const char* EnvKindName(EnvKind kind) {
  return kind == EnvKind::kRoughTerrain ? "rough_terrain" : "gap_crosser";
}

EnvKind EnvKindFromName(const std::string& name) {
  if (name == "rough_terrain") return EnvKind::kRoughTerrain;
  if (name == "gap_crosser") return EnvKind::kGapCrosser;
  throw Error(ErrorKind::kValidation, "unknown env_kind '" + name + "'");
}

nlohmann::json EnvParamsToJson(const EnvParams& params) {
  return {{"env_kind", EnvKindName(params.kind)},
          {"max_height", params.max_height},
          {"height_variance", params.height_variance},
          {"gap_width", params.gap_width}};
}

EnvParams EnvParamsFromJson(const nlohmann::json& doc) {
  EnvParams params;
  params.kind = EnvKindFromName(doc.at("env_kind").get<std::string>());
  params.max_height = doc.value("max_height", params.max_height);
  params.height_variance = doc.value("height_variance", params.height_variance);
  params.gap_width = doc.value("gap_width", params.gap_width);
  return params;
}

namespace {

template <typename Config, typename F>
void VisitTerrainConfig(Config& c, F&& f) {
  f("x_min", c.x_min);
  f("x_max", c.x_max);
  f("x_spacing", c.x_spacing);
  f("components_per_50", c.components_per_50);
  f("sigma_scale_lo", c.sigma_scale_lo);
  f("sigma_scale_hi", c.sigma_scale_hi);
  f("max_height_limit", c.max_height_limit);
  f("variance_lo", c.variance_lo);
  f("variance_hi", c.variance_hi);
  f("gap_base_height", c.gap_base_height);
  f("gap_period", c.gap_period);
  f("gap_offset", c.gap_offset);
  f("gap_min", c.gap_min);
  f("gap_max", c.gap_max);
}

template <typename Config, typename F>
void VisitSimConfig(Config& c, F&& f) {
  f("substeps_locomotion", c.substeps_locomotion);
  f("substeps_gap", c.substeps_gap);
  f("control_dt_locomotion", c.control_dt_locomotion);
  f("control_dt_gap", c.control_dt_gap);
  f("alive_bonus_locomotion", c.alive_bonus_locomotion);
  f("alive_bonus_gap", c.alive_bonus_gap);
  f("terminate_height_locomotion", c.terminate_height_locomotion);
  f("terminate_height_gap", c.terminate_height_gap);
  f("horizon", c.horizon);
  f("gravity", c.gravity);
  f("density", c.density);
  f("contact_stiffness", c.contact_stiffness);
  f("contact_damping", c.contact_damping);
  f("friction", c.friction);
  f("friction_damping", c.friction_damping);
  f("joint_damping", c.joint_damping);
  f("spawn_margin", c.spawn_margin);
  f("max_spawn_height", c.max_spawn_height);
  f("state_cap", c.state_cap);
  f("bone_length_range", c.ranges.bone_length);
  f("bone_angle_range", c.ranges.bone_angle);
  f("bone_size_range", c.ranges.bone_size);
  f("motor_gear_range", c.ranges.motor_gear);
  f("joint_range_range", c.ranges.joint_range);
}

template <typename Config, typename Visit>
nlohmann::json ConfigToJson(const Config& config, Visit visit) {
  nlohmann::json doc = nlohmann::json::object();
  visit(config, [&](const char* name, const auto& value) { doc[name] = value; });
  return doc;
}

template <typename Config, typename Visit>
Config ConfigFromJson(const nlohmann::json& doc, Config config, Visit visit) {
  visit(config, [&](const char* name, auto& value) {
    if (!doc.contains(name)) return;
    try {
      doc.at(name).get_to(value);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kSchema,
                  std::string("config field '") + name + "': " + e.what());
    }
  });
  return config;
}

}  // namespace

nlohmann::json TerrainConfigToJson(const TerrainConfig& config) {
  return ConfigToJson(config, [](auto& c, auto&& f) { VisitTerrainConfig(c, f); });
}

TerrainConfig TerrainConfigFromJson(const nlohmann::json& doc,
                                    const TerrainConfig& defaults) {
  return ConfigFromJson(doc, defaults,
                        [](auto& c, auto&& f) { VisitTerrainConfig(c, f); });
}

nlohmann::json SimConfigToJson(const SimConfig& config) {
  return ConfigToJson(config, [](auto& c, auto&& f) { VisitSimConfig(c, f); });
}

SimConfig SimConfigFromJson(const nlohmann::json& doc,
                            const SimConfig& defaults) {
  return ConfigFromJson(doc, defaults,
                        [](auto& c, auto&& f) { VisitSimConfig(c, f); });
}

std::pair<double, double> TerrainConfig::Bounds(EnvKind kind, int i) const {
  if (kind == EnvKind::kGapCrosser) return {gap_min, gap_max};
  if (i == 0) return {0.0, max_height_limit};
  return {variance_lo, variance_hi};
}

double TerrainConfig::Get(const EnvParams& p, int i) const {
  if (p.kind == EnvKind::kGapCrosser) return p.gap_width;
  return i == 0 ? p.max_height : p.height_variance;
}

void TerrainConfig::Set(EnvParams& p, int i, double value) const {
  if (p.kind == EnvKind::kGapCrosser) {
    p.gap_width = value;
  } else if (i == 0) {
    p.max_height = value;
  } else {
    p.height_variance = value;
  }
}

void ValidateEnvParams(const EnvParams& params, const TerrainConfig& config) {
  for (int i = 0; i < TerrainConfig::NumControlled(params.kind); i++) {
    auto [lo, hi] = config.Bounds(params.kind, i);
    double v = config.Get(params, i);
    if (!std::isfinite(v) || v < lo || v > hi) {
      throw Error(ErrorKind::kValidation,
                  std::string("env params out of bounds: ") +
                      EnvKindName(params.kind) + " parameter " +
                      std::to_string(i) + " = " + std::to_string(v));
    }
  }
}

double Heightfield::HeightAt(double x) const {
  if (samples.empty()) return base_height;
  double t = (x - x_origin) / x_spacing;
  if (t <= 0.0) return samples.front();
  double last = static_cast<double>(samples.size() - 1);
  if (t >= last) return samples.back();
  size_t i = static_cast<size_t>(t);
  double frac = t - static_cast<double>(i);
  return samples[i] + frac * (samples[i + 1] - samples[i]);
}

double Heightfield::SlopeAt(double x) const {
  if (samples.size() < 2) return 0.0;
  double t = (x - x_origin) / x_spacing;
  double last = static_cast<double>(samples.size() - 1);
  if (t <= 0.0 || t >= last) return 0.0;
  size_t i = static_cast<size_t>(t);
  return (samples[i + 1] - samples[i]) / x_spacing;
}

bool Heightfield::InGap(double x) const {
  for (const auto& [begin, end] : gaps) {
    if (x >= begin && x < end) return true;
  }
  return false;
}

Heightfield GenerateTerrain(const EnvParams& params, uint64_t seed,
                            const TerrainConfig& config) {
  ValidateEnvParams(params, config);
  Heightfield field;
  field.x_origin = config.x_min;
  field.x_spacing = config.x_spacing;
  const int count =
      static_cast<int>(std::lround((config.x_max - config.x_min) /
                                   config.x_spacing)) + 1;

  if (params.kind == EnvKind::kGapCrosser) {
    field.base_height = config.gap_base_height;
    field.samples.assign(count, config.gap_base_height);
    const double period = config.gap_period;
    int k_lo = static_cast<int>(
        std::floor((config.x_min - config.gap_offset) / period));
    int k_hi = static_cast<int>(
        std::ceil((config.x_max - config.gap_offset) / period));
    for (int k = k_lo; k <= k_hi; k++) {
      double begin = config.gap_offset + k * period;
      field.gaps.emplace_back(begin, begin + params.gap_width);
    }
    return field;
  }

  field.base_height = 0.0;
  Rng rng(seed);
  const double span = config.x_max - config.x_min;
  const int components = std::max(
      1, static_cast<int>(std::lround(config.components_per_50 * span / 50.0)));
  std::vector<double> mu(components), sigma(components), amp(components);
  for (int k = 0; k < components; k++) {
    mu[k] = rng.Uniform(config.x_min, config.x_max);
    sigma[k] = rng.Uniform(config.sigma_scale_lo, config.sigma_scale_hi) *
               params.height_variance;
    amp[k] = rng.Uniform(0.0, params.max_height);
  }
  field.samples.resize(count);
  double peak = 0.0;
  for (int i = 0; i < count; i++) {
    double x = config.x_min + config.x_spacing * i;
    double h = 0.0;
    for (int k = 0; k < components; k++) {
      double d = (x - mu[k]) / sigma[k];
      h += amp[k] * std::exp(-0.5 * d * d);
    }
    field.samples[i] = h;
    peak = std::max(peak, h);
  }
  // overlapping components can stack above the amplitude bound; rescale the
  // whole field so the shape is kept and max|h| <= max_height
  if (peak > params.max_height && peak > 0.0) {
    double scale = params.max_height / peak;
    for (double& h : field.samples) h = std::min(h * scale, params.max_height);
  }
  return field;
}

double Roughness(const Heightfield& field) {
  if (field.samples.empty()) return 0.0;
  double mean = 0.0;
  for (double h : field.samples) mean += h;
  mean /= static_cast<double>(field.samples.size());
  double var = 0.0;
  for (double h : field.samples) var += (h - mean) * (h - mean);
  return std::sqrt(var / static_cast<double>(field.samples.size()));
}

nlohmann::json HeightfieldToJson(const Heightfield& field) {
  nlohmann::json gaps = nlohmann::json::array();
  for (const auto& [begin, end] : field.gaps) gaps.push_back({begin, end});
  return {{"x_origin", field.x_origin},
          {"x_spacing", field.x_spacing},
          {"base_height", field.base_height},
          {"samples", field.samples},
          {"gaps", gaps}};
}

Heightfield HeightfieldFromJson(const nlohmann::json& doc) {
  Heightfield field;
  try {
    field.x_origin = doc.at("x_origin").get<double>();
    field.x_spacing = doc.at("x_spacing").get<double>();
    field.base_height = doc.value("base_height", 0.0);
    field.samples = doc.at("samples").get<std::vector<double>>();
    for (const auto& gap : doc.value("gaps", nlohmann::json::array())) {
      field.gaps.emplace_back(gap.at(0).get<double>(), gap.at(1).get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kSchema, std::string("heightfield: ") + e.what());
  }
  for (double h : field.samples) {
    if (!std::isfinite(h)) {
      throw Error(ErrorKind::kSchema, "heightfield: non-finite sample");
    }
  }
  return field;
}

}  // namespace mece
