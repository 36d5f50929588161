// Engine configurations shared by the tests.

#ifndef MECE_TESTS_CONFIGS_H_
#define MECE_TESTS_CONFIGS_H_

#include <cstdint>

#include "mece/coevo.h"

namespace mece::testing {

inline NetSizes TinyNets() {
  NetSizes s;
  s.policy_gnn = {8, 8};
  s.policy_mlp = {8};
  s.value_gnn = {8};
  s.value_mlp = {16};
  return s;
}

// Seconds-scale runs with many co-evo steps.
inline CoEvoConfig TinyConfig(uint64_t seed = 0) {
  CoEvoConfig c;
  c.seed = seed;
  c.budget = 4096;
  c.tau_max = 128;
  c.num_workers = 4;
  c.terrain_pool = 2;
  c.control_ppo.batch_size = 128;
  c.control_ppo.minibatch_size = 64;
  c.control_ppo.epochs = 2;
  c.morph_ppo.batch_size = 4;
  c.morph_ppo.minibatch_size = 4;
  c.morph_ppo.epochs = 2;
  c.env_ppo.batch_size = 4;
  c.env_ppo.minibatch_size = 4;
  c.env_ppo.epochs = 2;
  c.control_net = TinyNets();
  c.morph_net = TinyNets();
  c.env_net = TinyNets();
  c.n_eval = 1;
  c.eval_horizon = 24;
  c.meta_episode = 4;
  c.sim.horizon = 200;
  return c;
}

// Desk-scale training: small networks, a 500k-step budget.
inline CoEvoConfig DeskConfig(uint64_t seed = 0) {
  CoEvoConfig c;
  c.seed = seed;
  c.budget = 500000;
  c.tau_max = 16384;
  NetSizes control;
  control.policy_gnn = {32, 32};
  control.value_gnn = {32, 32};
  control.value_mlp = {64, 64};
  c.control_net = control;
  NetSizes meta = control;
  meta.policy_mlp = {64, 64};
  c.morph_net = meta;
  c.env_net = meta;
  c.control_ppo.epochs = 5;
  c.morph_ppo.batch_size = 8;
  c.morph_ppo.minibatch_size = 8;
  c.env_ppo.batch_size = 8;
  c.env_ppo.minibatch_size = 8;
  c.meta_episode = 8;
  return c;
}

}  // namespace mece::testing

#endif  // MECE_TESTS_CONFIGS_H_
