#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mece/error.h"
#include "mece/sim2d.h"

namespace mece {
namespace {

constexpr double kPi = 3.14159265358979323846;

}  // namespace

World::World(const Morphology& morphology, Heightfield terrain,
             EnvParams params, SimConfig config)
    : config_(std::move(config)),
      params_(params),
      terrain_(std::move(terrain)) {
  auto violations = Validate(morphology);
  if (!violations.empty()) {
    throw Error(ErrorKind::kValidation, "world: invalid morphology: " +
                                            violations.front());
  }
  for (double h : terrain_.samples) {
    if (!std::isfinite(h)) {
      throw Error(ErrorKind::kValidation, "world: non-finite terrain");
    }
  }
  num_bodies_ = morphology.size();
  parent_ = morphology.ParentIndices();
  path_.resize(num_bodies_);
  const auto& ranges = config_.ranges;
  for (int u = 0; u < num_bodies_; u++) {
    if (parent_[u] >= 0) path_[u] = path_[parent_[u]];
    path_[u].push_back(u);
    const Attributes& z = morphology.nodes()[u].attrs;
    double length = ranges.Denormalize(kBoneLength, z[kBoneLength]);
    double radius = ranges.Denormalize(kBoneSize, z[kBoneSize]);
    double mass =
        config_.density * (2.0 * radius * length + kPi * radius * radius);
    length_.push_back(length);
    radius_.push_back(radius);
    mass_.push_back(mass);
    inertia_.push_back(mass * (length * length / 12.0 + radius * radius / 4.0));
    rest_angle_.push_back(ranges.Denormalize(kBoneAngle, z[kBoneAngle]));
    gear_.push_back(ranges.Denormalize(kMotorGear, z[kMotorGear]));
    limit_.push_back(ranges.Denormalize(kJointRange, z[kJointRange]));
  }
  const int dofs = num_dofs();
  theta_.resize(num_bodies_);
  anchor_x_.resize(num_bodies_);
  anchor_z_.resize(num_bodies_);
  tip_x_.resize(num_bodies_);
  tip_z_.resize(num_bodies_);
  mass_matrix_.resize(dofs, dofs);
  force_.resize(dofs);
  jac_.resize(2, dofs);
  state_.q.assign(dofs, 0.0);
  state_.qd.assign(dofs, 0.0);
}

void World::Kinematics(const std::vector<double>& q) {
  for (int u = 0; u < num_bodies_; u++) {
    int p = parent_[u];
    if (p < 0) {
      theta_[u] = q[2] + rest_angle_[u];
      anchor_x_[u] = q[0];
      anchor_z_[u] = q[1];
    } else {
      theta_[u] = theta_[p] + rest_angle_[u] + q[2 + u];
      anchor_x_[u] = tip_x_[p];
      anchor_z_[u] = tip_z_[p];
    }
    tip_x_[u] = anchor_x_[u] + length_[u] * std::sin(theta_[u]);
    tip_z_[u] = anchor_z_[u] - length_[u] * std::cos(theta_[u]);
  }
}

double World::RestDepth() const {
  // rest pose: root at the origin, zero angles
  std::vector<double> theta(num_bodies_), ax(num_bodies_), az(num_bodies_),
      tx(num_bodies_), tz(num_bodies_);
  double lowest = -radius_[0];
  for (int u = 0; u < num_bodies_; u++) {
    int p = parent_[u];
    theta[u] = (p < 0 ? 0.0 : theta[p]) + rest_angle_[u];
    ax[u] = p < 0 ? 0.0 : tx[p];
    az[u] = p < 0 ? 0.0 : tz[p];
    tx[u] = ax[u] + length_[u] * std::sin(theta[u]);
    tz[u] = az[u] - length_[u] * std::cos(theta[u]);
    lowest = std::min(lowest, tz[u] - radius_[u]);
  }
  return -lowest;
}

const WorldState& World::Reset() {
  const int dofs = num_dofs();
  std::vector<double> q(dofs, 0.0);
  Kinematics(q);
  double lowest = anchor_z_[0] - radius_[0];
  double x_lo = anchor_x_[0] - radius_[0], x_hi = anchor_x_[0] + radius_[0];
  for (int u = 0; u < num_bodies_; u++) {
    lowest = std::min(lowest, tip_z_[u] - radius_[u]);
    x_lo = std::min(x_lo, tip_x_[u] - radius_[u]);
    x_hi = std::max(x_hi, tip_x_[u] + radius_[u]);
  }
  double depth = -lowest;
  if (depth + config_.spawn_margin > config_.max_spawn_height) {
    throw Error(ErrorKind::kPlacement,
                "morphology too tall to place: depth " + std::to_string(depth));
  }
  // highest terrain point under the footprint
  double ground = terrain_.HeightAt(x_lo);
  for (double x = x_lo; x <= x_hi; x += 0.5 * terrain_.x_spacing) {
    ground = std::max(ground, terrain_.HeightAt(x));
  }
  ground = std::max(ground, terrain_.HeightAt(x_hi));
  q[1] = ground + depth + config_.spawn_margin;

  state_ = WorldState{};
  state_.q = std::move(q);
  state_.qd.assign(dofs, 0.0);
  ComputeLinks();
  return state_;
}

void World::SetState(std::vector<double> q, std::vector<double> qd) {
  if (static_cast<int>(q.size()) != num_dofs() ||
      static_cast<int>(qd.size()) != num_dofs()) {
    throw Error(ErrorKind::kShape, "world state size mismatch");
  }
  state_.q = std::move(q);
  state_.qd = std::move(qd);
  state_.terminated = false;
  ComputeLinks();
}

void World::ComputeLinks() {
  Kinematics(state_.q);
  const auto& qd = state_.qd;
  state_.links.resize(num_bodies_);
  std::vector<double> omega(num_bodies_);
  for (int u = 0; u < num_bodies_; u++) {
    int p = parent_[u];
    omega[u] = p < 0 ? qd[2] : omega[p] + qd[2 + u];
    LinkPose& link = state_.links[u];
    double cx = 0.5 * (anchor_x_[u] + tip_x_[u]);
    double cz = 0.5 * (anchor_z_[u] + tip_z_[u]);
    link.x = cx;
    link.z = cz;
    link.angle = theta_[u];
    link.omega = omega[u];
    // velocity of the COM: root translation plus rotation of each segment
    double vx = qd[0], vz = qd[1];
    for (int k : path_[u]) {
      double sx, sz;
      if (k == u) {
        sx = cx - anchor_x_[k];
        sz = cz - anchor_z_[k];
      } else {
        sx = tip_x_[k] - anchor_x_[k];
        sz = tip_z_[k] - anchor_z_[k];
      }
      vx += -omega[k] * sz;
      vz += omega[k] * sx;
    }
    link.vx = vx;
    link.vz = vz;
  }
}

double World::RootHeight() const {
  return state_.q[1] - terrain_.HeightAt(state_.q[0]);
}

double World::Phase(double x) const {
  if (params_.kind != EnvKind::kGapCrosser) return 0.0;
  // gap period is recovered from the gap list
  if (terrain_.gaps.size() < 2) return 0.0;
  double period = terrain_.gaps[1].first - terrain_.gaps[0].first;
  double phase = std::fmod(x, period) / period;
  if (phase < 0.0) phase += 1.0;
  if (phase >= 1.0) phase = 0.0;
  return phase;
}

Eigen::MatrixXd World::Observe() const {
  Eigen::MatrixXd obs = Eigen::MatrixXd::Zero(num_bodies_, kObsSize);
  const auto& q = state_.q;
  const auto& qd = state_.qd;
  obs(0, 0) = q[2];
  obs(0, 1) = qd[2];
  obs(0, 2) = RootHeight();
  obs(0, 3) = qd[0];
  obs(0, 4) = qd[1];
  obs(0, 5) = Phase(q[0]);
  for (int u = 1; u < num_bodies_; u++) {
    obs(u, 0) = q[2 + u];
    obs(u, 1) = qd[2 + u];
  }
  return obs;
}

void World::Substep(double dt, std::span<const double> torques) {
  auto& q = state_.q;
  auto& qd = state_.qd;
  const int dofs = num_dofs();
  Kinematics(q);

  std::vector<double> omega(num_bodies_);
  for (int u = 0; u < num_bodies_; u++) {
    int p = parent_[u];
    omega[u] = p < 0 ? qd[2] : omega[p] + qd[2 + u];
  }

  mass_matrix_.setZero();
  force_.setZero();

  // dofs that move a point on body u: x, z, root angle and its hinges
  auto angular_dof = [](int k) { return k == 0 ? 2 : 2 + k; };

  // Jacobian columns of point (px, pz) on body u, written into jac_
  auto point_jacobian = [&](int u, double px, double pz) {
    jac_.setZero();
    jac_(0, 0) = 1.0;
    jac_(1, 1) = 1.0;
    for (int k : path_[u]) {
      int d = angular_dof(k);
      jac_(0, d) = -(pz - anchor_z_[k]);
      jac_(1, d) = px - anchor_x_[k];
    }
  };

  const double g = config_.gravity;
  for (int u = 0; u < num_bodies_; u++) {
    double cx = 0.5 * (anchor_x_[u] + tip_x_[u]);
    double cz = 0.5 * (anchor_z_[u] + tip_z_[u]);
    point_jacobian(u, cx, cz);
    // centripetal bias acceleration of the COM
    double bx = 0.0, bz = 0.0;
    for (int k : path_[u]) {
      double sx = (k == u ? cx : tip_x_[k]) - anchor_x_[k];
      double sz = (k == u ? cz : tip_z_[k]) - anchor_z_[k];
      double w2 = omega[k] * omega[k];
      bx -= w2 * sx;
      bz -= w2 * sz;
    }
    const double m = mass_[u];
    // restrict the products to the dofs on this body's path
    const int count = static_cast<int>(path_[u].size()) + 2;
    int cols[64];
    cols[0] = 0;
    cols[1] = 1;
    for (size_t i = 0; i < path_[u].size(); i++) {
      cols[i + 2] = angular_dof(path_[u][i]);
    }
    for (int a = 0; a < count; a++) {
      int i = cols[a];
      double jxi = jac_(0, i), jzi = jac_(1, i);
      double rot_i = a >= 2 ? 1.0 : 0.0;
      for (int b = 0; b < count; b++) {
        int j = cols[b];
        double rot_j = b >= 2 ? 1.0 : 0.0;
        mass_matrix_(i, j) += m * (jxi * jac_(0, j) + jzi * jac_(1, j)) +
                              inertia_[u] * rot_i * rot_j;
      }
      force_(i) += jxi * (-m * bx) + jzi * (-m * g - m * bz);
    }
  }

  // contacts at the head anchor and every bone tip
  auto contact = [&](int u, double px, double pz, double radius) {
    if (terrain_.InGap(px)) return;
    double h = terrain_.HeightAt(px);
    double slope = terrain_.SlopeAt(px);
    double inv = 1.0 / std::sqrt(1.0 + slope * slope);
    double nx = -slope * inv, nz = inv;
    double pen = (h - pz) * nz + radius;
    if (pen <= 0.0) return;
    point_jacobian(u, px, pz);
    double vx = 0.0, vz = 0.0;
    for (int d = 0; d < dofs; d++) {
      vx += jac_(0, d) * qd[d];
      vz += jac_(1, d) * qd[d];
    }
    double tx = nz, tz = -nx;
    double vn = vx * nx + vz * nz;
    double vt = vx * tx + vz * tz;
    double fn = std::max(0.0, config_.contact_stiffness * pen -
                                  config_.contact_damping * vn);
    double cap = config_.friction * fn;
    double ft = -std::clamp(config_.friction_damping * vt, -cap, cap);
    double fx = fn * nx + ft * tx;
    double fz = fn * nz + ft * tz;
    for (int d = 0; d < dofs; d++) {
      force_(d) += jac_(0, d) * fx + jac_(1, d) * fz;
    }
  };
  contact(0, anchor_x_[0], anchor_z_[0], radius_[0]);
  for (int u = 0; u < num_bodies_; u++) {
    contact(u, tip_x_[u], tip_z_[u], radius_[u]);
  }

  // actuation and passive joint damping
  for (int u = 1; u < num_bodies_; u++) {
    double a = std::clamp(torques[u], -1.0, 1.0);
    force_(2 + u) += a * gear_[u] - config_.joint_damping * qd[2 + u];
  }

  // in-place Cholesky of the (symmetric positive definite) mass matrix, then
  // forward and back substitution into force_
  double* m = mass_matrix_.data();  // column-major, symmetric
  for (int j = 0; j < dofs; j++) {
    double diag = m[j * dofs + j];
    for (int k = 0; k < j; k++) diag -= m[k * dofs + j] * m[k * dofs + j];
    if (!(diag > 0.0)) {
      // caught by the finiteness check and handled as an unstable step
      qd[0] = std::numeric_limits<double>::quiet_NaN();
      return;
    }
    const double l = std::sqrt(diag);
    m[j * dofs + j] = l;
    for (int i = j + 1; i < dofs; i++) {
      double v = m[j * dofs + i];
      for (int k = 0; k < j; k++) v -= m[k * dofs + i] * m[k * dofs + j];
      m[j * dofs + i] = v / l;  // L(i, j) kept below the diagonal
    }
  }
  double* f = force_.data();
  for (int i = 0; i < dofs; i++) {
    double v = f[i];
    for (int k = 0; k < i; k++) v -= m[k * dofs + i] * f[k];
    f[i] = v / m[i * dofs + i];
  }
  for (int i = dofs - 1; i >= 0; i--) {
    double v = f[i];
    for (int k = i + 1; k < dofs; k++) v -= m[i * dofs + k] * f[k];
    f[i] = v / m[i * dofs + i];
  }

  for (int d = 0; d < dofs; d++) {
    qd[d] += dt * f[d];
    q[d] += dt * qd[d];
  }
  for (int u = 1; u < num_bodies_; u++) {
    double& angle = q[2 + u];
    double& rate = qd[2 + u];
    if (angle > limit_[u]) {
      angle = limit_[u];
      if (rate > 0.0) rate = 0.0;
    } else if (angle < -limit_[u]) {
      angle = -limit_[u];
      if (rate < 0.0) rate = 0.0;
    }
  }
}

bool World::Finite() const {
  for (size_t d = 0; d < state_.q.size(); d++) {
    if (!std::isfinite(state_.q[d]) || !std::isfinite(state_.qd[d])) {
      return false;
    }
    if (std::abs(state_.q[d]) > config_.state_cap ||
        std::abs(state_.qd[d]) > config_.state_cap) {
      return false;
    }
  }
  return true;
}

StepResult World::Step(std::span<const double> torques) {
  if (state_.terminated) {
    throw Error(ErrorKind::kState, "step on a terminated world");
  }
  if (static_cast<int>(torques.size()) != num_bodies_) {
    throw Error(ErrorKind::kShape, "torque count " +
                                       std::to_string(torques.size()) +
                                       " != joint count " +
                                       std::to_string(num_bodies_));
  }
  for (double t : torques) {
    if (!std::isfinite(t)) throw Error(ErrorKind::kInput, "non-finite torque");
  }

  const EnvKind kind = params_.kind;
  const int substeps = config_.Substeps(kind);
  const double control_dt = config_.ControlDt(kind);
  const double dt = control_dt / substeps;
  const std::vector<double> q_prev = state_.q, qd_prev = state_.qd;
  const double x_prev = state_.q[0];

  bool unstable = false;
  for (int s = 0; s < substeps; s++) {
    Substep(dt, torques);
    if (!Finite()) {
      unstable = true;
      break;
    }
  }

  StepResult result;
  state_.step_count++;
  if (unstable) {
    // roll back to the last finite state and abort the episode
    state_.q = q_prev;
    state_.qd = qd_prev;
    state_.terminated = true;
    ComputeLinks();
    result.observation = Observe();
    result.reward = 0.0;
    result.done = true;
    result.info.unstable = true;
    result.info.root_height = RootHeight();
    return result;
  }
  state_.sim_time += control_dt;
  ComputeLinks();

  result.info.forward_reward = std::abs(state_.q[0] - x_prev) / control_dt;
  result.info.alive_bonus = config_.AliveBonus(kind);
  result.reward = result.info.forward_reward + result.info.alive_bonus;
  result.info.root_height = RootHeight();
  result.info.fell = result.info.root_height < config_.TerminateHeight(kind);
  result.info.horizon = state_.step_count >= config_.horizon;
  result.done = result.info.fell || result.info.horizon;
  state_.terminated = result.done;
  result.observation = Observe();
  return result;
}

}  // namespace mece
