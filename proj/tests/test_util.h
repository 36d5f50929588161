// Independent reference computations used by the tests.

#ifndef MECE_TESTS_TEST_UTIL_H_
#define MECE_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace mece::testing {

// Five-point central difference of f along coordinate i of x.
inline double CentralDifference(std::vector<double>& x, int i,
                                const std::function<double()>& f,
                                double h = 1e-3) {
  const double x0 = x[i];
  x[i] = x0 + 2 * h;
  double f2 = f();
  x[i] = x0 + h;
  double f1 = f();
  x[i] = x0 - h;
  double fm1 = f();
  x[i] = x0 - 2 * h;
  double fm2 = f();
  x[i] = x0;
  return (-f2 + 8 * f1 - 8 * fm1 + fm2) / (12 * h);
}

// |a - n| / max(|a|, |n|, floor)
inline double RelativeError(double analytic, double numeric,
                            double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// A_t as the explicit double sum sum_l (gamma lambda)^l delta_{t+l}, cut at
// the first episode end at or after t.
inline std::vector<double> BruteForceGae(const std::vector<double>& rewards,
                                         const std::vector<double>& values,
                                         double bootstrap,
                                         const std::vector<uint8_t>& dones,
                                         double gamma, double lambda) {
  const int n = static_cast<int>(rewards.size());
  auto value_at = [&](int t) { return t < n ? values[t] : bootstrap; };
  std::vector<double> delta(n);
  for (int t = 0; t < n; t++) {
    double next = dones[t] ? 0.0 : value_at(t + 1);
    delta[t] = rewards[t] + gamma * next - values[t];
  }
  std::vector<double> adv(n, 0.0);
  for (int t = 0; t < n; t++) {
    double weight = 1.0;
    for (int k = t; k < n; k++) {
      adv[t] += weight * delta[k];
      if (dones[k]) break;
      weight *= gamma * lambda;
    }
  }
  return adv;
}

// Kolmogorov-Smirnov statistic of samples against U[lo, hi].
inline double KsStatisticUniform(std::vector<double> samples, double lo,
                                 double hi) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (size_t i = 0; i < samples.size(); i++) {
    double cdf = std::clamp((samples[i] - lo) / (hi - lo), 0.0, 1.0);
    d = std::max({d, (i + 1) / n - cdf, cdf - i / n});
  }
  return d;
}

// Asymptotic two-sided KS p-value via the Kolmogorov series.
inline double KsPValue(double d, int n) {
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  const double lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
  double sum = 0.0;
  for (int k = 1; k <= 100; k++) {
    double term = 2.0 * ((k % 2) ? 1.0 : -1.0) *
                  std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-12) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

// Average ranks (ties share the mean rank).
inline std::vector<double> Ranks(std::span<const double> v) {
  std::vector<int> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) j++;
    double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; k++) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double Spearman(std::span<const double> a, std::span<const double> b) {
  std::vector<double> ra = Ranks(a), rb = Ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0, va = 0, vb = 0;
  for (size_t i = 0; i < ra.size(); i++) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

// Returns-matrix lookup straight from a logged JSON matrix.
inline double LoggedReturn(const nlohmann::json& matrix, int morph_id,
                           int env_id) {
  const auto& rows = matrix.at("morph_ids");
  const auto& cols = matrix.at("env_ids");
  for (size_t i = 0; i < rows.size(); i++) {
    if (rows[i].get<int>() != morph_id) continue;
    for (size_t j = 0; j < cols.size(); j++) {
      if (cols[j].get<int>() == env_id) {
        return matrix.at("values")[i][j].get<double>();
      }
    }
  }
  return std::nan("");
}

// r_m from two logged matrices: mean over shared environments of the
// current-row minus previous-row returns, minus lambda times the cost.
inline double OracleMorphReward(const nlohmann::json& curr, int curr_morph,
                                const nlohmann::json& prev, int prev_morph,
                                double cost, double lambda) {
  double sum = 0.0;
  int count = 0;
  for (const auto& e : curr.at("env_ids")) {
    int env = e.get<int>();
    double p = LoggedReturn(prev, prev_morph, env);
    if (std::isnan(p)) continue;
    sum += LoggedReturn(curr, curr_morph, env) - p;
    count++;
  }
  if (count == 0) return -lambda * cost;
  return sum / count - lambda * cost;
}

// P from one logged matrix: current-env minus previous-env return of the
// current morphology (zero without a previous environment).
inline double OracleProgress(const nlohmann::json& record) {
  if (record.at("prev_env_id").is_null()) return 0.0;
  const auto& m = record.at("returns_matrix");
  int morph = record.at("morph_id").get<int>();
  return LoggedReturn(m, morph, record.at("env_id").get<int>()) -
         LoggedReturn(m, morph, record.at("prev_env_id").get<int>());
}

}  // namespace mece::testing

#endif  // MECE_TESTS_TEST_UTIL_H_
