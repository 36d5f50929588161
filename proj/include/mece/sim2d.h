#ifndef MECE_SIM2D_H_
#define MECE_SIM2D_H_

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mece/morphology.h"

namespace mece {

enum class EnvKind { kRoughTerrain, kGapCrosser };

const char* EnvKindName(EnvKind kind);
EnvKind EnvKindFromName(const std::string& name);

// theta^E: terrain-generation parameters of one training environment.
struct EnvParams {
  EnvKind kind = EnvKind::kRoughTerrain;
  double max_height = 1.2;
  double height_variance = 2.4;
  double gap_width = 0.5;  // GapCrosser only

  bool operator==(const EnvParams&) const = default;
};

nlohmann::json EnvParamsToJson(const EnvParams& params);
EnvParams EnvParamsFromJson(const nlohmann::json& doc);

struct TerrainConfig {
  double x_min = -20.0;
  double x_max = 80.0;
  double x_spacing = 0.1;
  // Gaussian mixture
  double components_per_50 = 8.0;
  double sigma_scale_lo = 0.25;  // sigma_k ~ U[lo, hi] * height_variance
  double sigma_scale_hi = 0.5;
  // parameter bounds
  double max_height_limit = 2.4;
  double variance_lo = 2.4;
  double variance_hi = 7.2;
  // gap crosser
  double gap_base_height = 0.2;
  double gap_period = 6.0;
  double gap_offset = 2.0;  // first gap starts here, then every period
  double gap_min = 0.5;
  double gap_max = 3.0;

  // number of parameters the environment policy controls for `kind`
  static int NumControlled(EnvKind kind) {
    return kind == EnvKind::kRoughTerrain ? 2 : 1;
  }
  // lower/upper bound of controlled parameter `i`
  std::pair<double, double> Bounds(EnvKind kind, int i) const;
  double Get(const EnvParams& p, int i) const;
  void Set(EnvParams& p, int i, double value) const;
};

nlohmann::json TerrainConfigToJson(const TerrainConfig& config);
// Missing fields keep the values of `defaults`.
TerrainConfig TerrainConfigFromJson(const nlohmann::json& doc,
                                    const TerrainConfig& defaults = {});

// Throws ErrorKind::kValidation when params violate their bounds.
void ValidateEnvParams(const EnvParams& params, const TerrainConfig& config);

struct Heightfield {
  double x_origin = 0.0;
  double x_spacing = 0.1;
  double base_height = 0.0;
  std::vector<double> samples;
  // bottomless intervals [begin, end)
  std::vector<std::pair<double, double>> gaps;

  // linear interpolation, clamped at the ends; ignores gaps
  double HeightAt(double x) const;
  double SlopeAt(double x) const;
  bool InGap(double x) const;
  double x_end() const {
    return x_origin + x_spacing * static_cast<double>(samples.size() - 1);
  }

  bool operator==(const Heightfield&) const = default;
};

Heightfield GenerateTerrain(const EnvParams& params, uint64_t seed,
                            const TerrainConfig& config = {});

// standard deviation of the height samples
double Roughness(const Heightfield& field);

nlohmann::json HeightfieldToJson(const Heightfield& field);
Heightfield HeightfieldFromJson(const nlohmann::json& doc);

struct SimConfig {
  int substeps_locomotion = 8;
  int substeps_gap = 80;
  double control_dt_locomotion = 0.008;
  double control_dt_gap = 0.08;
  double alive_bonus_locomotion = 1.0;
  double alive_bonus_gap = 0.1;
  double terminate_height_locomotion = 1.4;
  double terminate_height_gap = 1.5;
  int horizon = 1000;

  double gravity = 9.81;
  double density = 4.0;
  double contact_stiffness = 4000.0;
  double contact_damping = 60.0;
  double friction = 1.0;
  double friction_damping = 150.0;
  double joint_damping = 0.5;
  double spawn_margin = 0.05;
  double max_spawn_height = 12.0;
  double state_cap = 1.0e4;

  AttributeRanges ranges;

  int Substeps(EnvKind kind) const {
    return kind == EnvKind::kRoughTerrain ? substeps_locomotion : substeps_gap;
  }
  double ControlDt(EnvKind kind) const {
    return kind == EnvKind::kRoughTerrain ? control_dt_locomotion
                                          : control_dt_gap;
  }
  double AliveBonus(EnvKind kind) const {
    return kind == EnvKind::kRoughTerrain ? alive_bonus_locomotion
                                          : alive_bonus_gap;
  }
  double TerminateHeight(EnvKind kind) const {
    return kind == EnvKind::kRoughTerrain ? terminate_height_locomotion
                                          : terminate_height_gap;
  }
};

nlohmann::json SimConfigToJson(const SimConfig& config);
SimConfig SimConfigFromJson(const nlohmann::json& doc,
                            const SimConfig& defaults = {});

// Per-joint observation: [angle, angular velocity, root height, root vx,
// root vz, phase]; non-root joints are zero-padded to the same length.
inline constexpr int kObsSize = 6;

struct LinkPose {
  double x = 0, z = 0, angle = 0;     // center of mass and absolute angle
  double vx = 0, vz = 0, omega = 0;
  bool operator==(const LinkPose&) const = default;
};

struct WorldState {
  std::vector<double> q;   // [root x, root z, root angle, hinge angles...]
  std::vector<double> qd;
  std::vector<LinkPose> links;
  double sim_time = 0.0;
  int step_count = 0;
  bool terminated = false;

  double root_x() const { return q[0]; }
  double root_z() const { return q[1]; }
  bool operator==(const WorldState&) const = default;
};

struct StepInfo {
  double forward_reward = 0.0;  // |dx| / dt
  double alive_bonus = 0.0;
  double root_height = 0.0;
  bool fell = false;
  bool horizon = false;
  bool unstable = false;
};

struct StepResult {
  Eigen::MatrixXd observation;  // num_joints x kObsSize
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

// Planar articulated tree in reduced coordinates: a free root (x, z, angle)
// and one hinge per non-head joint. Each joint owns a capsule bone that
// starts at its parent's bone tip. Contacts are penalty springs against the
// heightfield with capped viscous friction; integration is semi-implicit Euler.
class World {
 public:
  World(const Morphology& morphology, Heightfield terrain, EnvParams params,
        SimConfig config = {});

  // Places the agent so its lowest point clears the terrain under its
  // footprint by spawn_margin. Throws ErrorKind::kPlacement if the root would
  // sit more than max_spawn_height above the terrain.
  const WorldState& Reset();

  // torques in [-1, 1] (clipped), one per joint in morphology order; the head
  // entry drives nothing. Throws ErrorKind::kInput on non-finite torques and
  // ErrorKind::kState when stepping a terminated world.
  StepResult Step(std::span<const double> torques);

  Eigen::MatrixXd Observe() const;

  const WorldState& state() const { return state_; }
  // replaces the generalized state (links are recomputed)
  void SetState(std::vector<double> q, std::vector<double> qd);

  int num_joints() const { return num_bodies_; }
  int num_dofs() const { return num_bodies_ + 2; }
  double RootHeight() const;
  double Phase(double x) const;
  const Heightfield& terrain() const { return terrain_; }
  const EnvParams& params() const { return params_; }
  const SimConfig& config() const { return config_; }

  // rest-pose vertical extent below the root and horizontal extent, from the
  // bone geometry only
  double RestDepth() const;

  // physical properties per body
  const std::vector<double>& lengths() const { return length_; }
  const std::vector<double>& radii() const { return radius_; }
  const std::vector<double>& masses() const { return mass_; }

 private:
  void Kinematics(const std::vector<double>& q);
  void ComputeLinks();
  void Substep(double dt, std::span<const double> torques);
  bool Finite() const;

  SimConfig config_;
  EnvParams params_;
  Heightfield terrain_;
  int num_bodies_ = 0;

  std::vector<int> parent_;
  std::vector<std::vector<int>> path_;  // ancestors incl. self, head first
  std::vector<double> length_, radius_, mass_, inertia_, rest_angle_, gear_,
      limit_;

  // kinematic scratch
  std::vector<double> theta_, anchor_x_, anchor_z_, tip_x_, tip_z_;
  Eigen::MatrixXd mass_matrix_;
  Eigen::VectorXd force_;
  Eigen::MatrixXd jac_;  // 2 x dofs scratch

  WorldState state_;
};

}  // namespace mece

#endif  // MECE_SIM2D_H_
