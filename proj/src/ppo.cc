#include "mece/ppo.h"

#include <cmath>
#include <string>

namespace mece {

void PpoConfig::Validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorKind::kValidation, "ppo config: " + what);
  };
  if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must be in (0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda must be in [0, 1]");
  if (!(clip > 0.0)) fail("clip must be positive");
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (minibatch_size < 1) fail("minibatch_size must be >= 1");
  if (!(policy_lr > 0.0) || !(value_lr > 0.0)) fail("learning rates must be > 0");
}

nlohmann::json PpoConfigToJson(const PpoConfig& c) {
  return {{"clip", c.clip},
          {"gamma", c.gamma},
          {"lambda", c.lambda},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"minibatch_size", c.minibatch_size},
          {"policy_lr", c.policy_lr},
          {"value_lr", c.value_lr},
          {"max_grad_norm", c.max_grad_norm},
          {"normalize_advantages", c.normalize_advantages},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps}};
}

PpoConfig PpoConfigFromJson(const nlohmann::json& doc,
                            const PpoConfig& defaults) {
  PpoConfig c = defaults;
  try {
    c.clip = doc.value("clip", c.clip);
    c.gamma = doc.value("gamma", c.gamma);
    c.lambda = doc.value("lambda", c.lambda);
    c.epochs = doc.value("epochs", c.epochs);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.minibatch_size = doc.value("minibatch_size", c.minibatch_size);
    c.policy_lr = doc.value("policy_lr", c.policy_lr);
    c.value_lr = doc.value("value_lr", c.value_lr);
    c.max_grad_norm = doc.value("max_grad_norm", c.max_grad_norm);
    c.normalize_advantages =
        doc.value("normalize_advantages", c.normalize_advantages);
    c.adam_beta1 = doc.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = doc.value("adam_beta2", c.adam_beta2);
    c.adam_eps = doc.value("adam_eps", c.adam_eps);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kSchema, std::string("ppo config: ") + e.what());
  }
  return c;
}

GaeResult ComputeGae(std::span<const double> rewards,
                     std::span<const double> values, double bootstrap_value,
                     std::span<const uint8_t> dones, double gamma,
                     double lambda) {
  const size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) {
    throw Error(ErrorKind::kShape,
                "gae: rewards, values and dones must have equal length");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0) || !(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error(ErrorKind::kValidation, "gae: gamma and lambda must be in [0, 1]");
  }
  GaeResult out;
  out.advantages.resize(n);
  out.returns.resize(n);
  double next_value = bootstrap_value;
  double running = 0.0;
  for (size_t k = n; k-- > 0;) {
    double live = dones[k] ? 0.0 : 1.0;
    double delta = rewards[k] + gamma * next_value * live - values[k];
    running = delta + gamma * lambda * live * running;
    out.advantages[k] = running;
    out.returns[k] = running + values[k];
    next_value = values[k];
  }
  return out;
}

void NormalizeAdvantages(std::vector<double>& advantages) {
  const size_t n = advantages.size();
  if (n < 2) return;
  double mean = 0.0;
  for (double a : advantages) mean += a;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  double std = std::sqrt(var / static_cast<double>(n));
  for (double& a : advantages) a = (a - mean) / (std + 1e-8);
}

Adam::Adam(int size, double lr, double beta1, double beta2, double eps)
    : lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      m_(Vector::Zero(size)),
      v_(Vector::Zero(size)) {}

void Adam::Step(Vector& params, const Vector& grad) {
  if (grad.size() != params.size() || m_.size() != params.size()) {
    throw Error(ErrorKind::kShape, "adam: parameter size mismatch");
  }
  t_++;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double step = lr_ / c1;
  params.array() -=
      step * m_.array() / ((v_.array() / c2).sqrt() + eps_);
}

nlohmann::json Adam::ToJson() const {
  return {{"lr", lr_},
          {"t", t_},
          {"m", std::vector<double>(m_.data(), m_.data() + m_.size())},
          {"v", std::vector<double>(v_.data(), v_.data() + v_.size())}};
}

void Adam::FromJson(const nlohmann::json& doc) {
  try {
    auto m = doc.at("m").get<std::vector<double>>();
    auto v = doc.at("v").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(m.size()) != m_.size() ||
        static_cast<Eigen::Index>(v.size()) != v_.size()) {
      throw Error(ErrorKind::kSchema, "adam: state size mismatch");
    }
    lr_ = doc.at("lr").get<double>();
    t_ = doc.at("t").get<int64_t>();
    m_ = Eigen::Map<Vector>(m.data(), m.size());
    v_ = Eigen::Map<Vector>(v.data(), v.size());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kSchema, std::string("adam: ") + e.what());
  }
}

double ClipGradNorm(Vector& grad, double max_norm) {
  double norm = grad.norm();
  if (max_norm > 0.0 && norm > max_norm) grad *= max_norm / norm;
  return norm;
}

nlohmann::json PpoStatsToJson(const PpoStats& s) {
  return {{"policy_loss", s.policy_loss},
          {"value_loss", s.value_loss},
          {"kl_estimate", s.kl_estimate},
          {"clip_fraction", s.clip_fraction},
          {"samples", s.samples}};
}

SurrogateTerm ClippedSurrogate(double new_log_prob, double old_log_prob,
                               double advantage, double clip, int count) {
  SurrogateTerm term;
  const double log_ratio = new_log_prob - old_log_prob;
  const double ratio = std::exp(log_ratio);
  const double clipped_ratio = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  const double unclipped = ratio * advantage;
  const double saturated = clipped_ratio * advantage;
  term.clipped = std::abs(ratio - 1.0) > clip;
  if (unclipped <= saturated) {
    term.loss = -unclipped / count;
    term.dlogp = -advantage * ratio / count;
  } else {
    // the clipped branch is constant in the parameters
    term.loss = -saturated / count;
    term.dlogp = 0.0;
  }
  term.kl = (ratio - 1.0) - log_ratio;
  return term;
}

}  // namespace mece
