#include "mece/nets.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "mece/error.h"

namespace mece {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;

using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void CheckFinite(const RowMatrix& m, const std::string& where) {
  if (!m.allFinite()) {
    throw Error(ErrorKind::kNumeric, "non-finite values in " + where);
  }
}

}  // namespace

int ParamVector::Allocate(const std::string& name, int rows, int cols) {
  int offset = size();
  segments.push_back({name, offset, rows, cols});
  Vector grown = Vector::Zero(offset + rows * cols);
  grown.head(offset) = values;
  values = std::move(grown);
  return offset;
}

std::vector<std::pair<std::string, RowMatrix>> ParamVector::Unflatten() const {
  std::vector<std::pair<std::string, RowMatrix>> named;
  for (const auto& seg : segments) {
    named.emplace_back(seg.name,
                       ConstMap(values.data() + seg.offset, seg.rows, seg.cols));
  }
  return named;
}

void ParamVector::Flatten(
    const std::vector<std::pair<std::string, RowMatrix>>& named) {
  if (named.size() != segments.size()) {
    throw Error(ErrorKind::kShape, "flatten: segment count mismatch");
  }
  for (size_t i = 0; i < segments.size(); i++) {
    const auto& seg = segments[i];
    const auto& [name, m] = named[i];
    if (name != seg.name || m.rows() != seg.rows || m.cols() != seg.cols) {
      throw Error(ErrorKind::kShape, "flatten: segment '" + seg.name +
                                         "' shape or name mismatch");
    }
    MutMap(values.data() + seg.offset, seg.rows, seg.cols) = m;
  }
}

nlohmann::json ParamVectorToJson(const ParamVector& params) {
  nlohmann::json segments = nlohmann::json::array();
  for (const auto& seg : params.segments) {
    std::vector<double> values(params.values.data() + seg.offset,
                               params.values.data() + seg.offset + seg.size());
    segments.push_back({{"name", seg.name},
                        {"rows", seg.rows},
                        {"cols", seg.cols},
                        {"values", values}});
  }
  return {{"version", 1}, {"segments", segments}};
}

void ParamVectorFromJson(const nlohmann::json& doc, ParamVector& layout) {
  try {
    if (doc.at("version").get<int>() != 1) {
      throw Error(ErrorKind::kSchema, "param vector: unsupported version");
    }
    const auto& segments = doc.at("segments");
    if (segments.size() != layout.segments.size()) {
      throw Error(ErrorKind::kSchema, "param vector: segment count mismatch");
    }
    for (size_t i = 0; i < segments.size(); i++) {
      const auto& seg = layout.segments[i];
      const auto& entry = segments[i];
      if (entry.at("name").get<std::string>() != seg.name ||
          entry.at("rows").get<int>() != seg.rows ||
          entry.at("cols").get<int>() != seg.cols) {
        throw Error(ErrorKind::kSchema,
                    "param vector: segment '" + seg.name + "' mismatch");
      }
      auto values = entry.at("values").get<std::vector<double>>();
      if (static_cast<int>(values.size()) != seg.size()) {
        throw Error(ErrorKind::kSchema, "param vector: size mismatch");
      }
      std::copy(values.begin(), values.end(),
                layout.values.data() + seg.offset);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kSchema, std::string("param vector: ") + e.what());
  }
}

Dense::Dense(ParamVector& params, const std::string& name, int in, int out,
             bool with_bias)
    : in(in), out(out) {
  weight = params.Allocate(name + ".weight", out, in);
  if (with_bias) bias = params.Allocate(name + ".bias", 1, out);
}

void Dense::Init(ParamVector& params, Rng& rng, double scale) const {
  // orthonormal rows (or columns) from a QR factorization of a Gaussian matrix
  const int big = std::max(in, out), small = std::min(in, out);
  Eigen::MatrixXd a(big, small);
  for (int i = 0; i < big; i++) {
    for (int j = 0; j < small; j++) a(i, j) = rng.Normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  // fix signs so the factorization is unique
  Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int j = 0; j < small; j++) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  MutMap w(params.values.data() + weight, out, in);
  if (out >= in) {
    w = scale * q;
  } else {
    w = scale * q.transpose();
  }
  if (bias >= 0) params.values.segment(bias, out).setZero();
}

RowMatrix Dense::Forward(const Vector& params, const RowMatrix& x) const {
  ConstMap w(params.data() + weight, out, in);
  RowMatrix y(x.rows(), out);
  y.noalias() = x * w.transpose();
  if (bias >= 0) y.rowwise() += params.segment(bias, out).transpose();
  return y;
}

RowMatrix Dense::Backward(const Vector& params, const RowMatrix& x,
                          const RowMatrix& dy, Vector& grad) const {
  ConstMap w(params.data() + weight, out, in);
  MutMap gw(grad.data() + weight, out, in);
  gw.noalias() += dy.transpose() * x;
  if (bias >= 0) grad.segment(bias, out) += dy.colwise().sum().transpose();
  RowMatrix dx(dy.rows(), in);
  dx.noalias() = dy * w;
  return dx;
}

GraphTopology GraphTopology::FromParents(std::span<const int> parents) {
  GraphTopology graph;
  graph.num_nodes = static_cast<int>(parents.size());
  graph.neighbors.resize(parents.size());
  for (size_t u = 0; u < parents.size(); u++) {
    int p = parents[u];
    if (p < 0) continue;
    graph.neighbors[u].push_back(p);
    graph.neighbors[p].push_back(static_cast<int>(u));
  }
  return graph;
}

RowMatrix GraphTopology::NeighborSum(const RowMatrix& h) const {
  RowMatrix out = RowMatrix::Zero(h.rows(), h.cols());
  const Eigen::Index blocks = h.rows() / num_nodes;
  for (Eigen::Index b = 0; b < blocks; b++) {
    const Eigen::Index base = b * num_nodes;
    for (int u = 0; u < num_nodes; u++) {
      for (int v : neighbors[u]) out.row(base + u) += h.row(base + v);
    }
  }
  return out;
}

GraphNet::GraphNet(ParamVector& params, const std::string& name,
                   int input_size, std::vector<int> hidden)
    : input_size_(input_size), hidden_(std::move(hidden)) {
  int in = input_size_;
  for (size_t l = 0; l < hidden_.size(); l++) {
    std::string prefix = name + ".conv" + std::to_string(l);
    self_.emplace_back(params, prefix + ".self", in, hidden_[l]);
    neighbor_.emplace_back(params, prefix + ".neighbor", in, hidden_[l],
                           /*with_bias=*/false);
    in = hidden_[l];
  }
}

void GraphNet::Init(ParamVector& params, Rng& rng) const {
  for (size_t l = 0; l < self_.size(); l++) {
    self_[l].Init(params, rng, 1.0);
    neighbor_[l].Init(params, rng, 0.5);
  }
}

RowMatrix GraphNet::Forward(const Vector& params, const GraphTopology& graph,
                            const RowMatrix& x, Cache* cache) const {
  if (x.cols() != input_size_ || graph.num_nodes == 0 ||
      x.rows() % graph.num_nodes != 0) {
    throw Error(ErrorKind::kShape,
                "graph net: expected rows multiple of " +
                    std::to_string(graph.num_nodes) + " with " +
                    std::to_string(input_size_) + " features, got " +
                    std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
  }
  if (cache) *cache = Cache{};
  RowMatrix h = x;
  for (size_t l = 0; l < self_.size(); l++) {
    RowMatrix nh = graph.NeighborSum(h);
    RowMatrix z = self_[l].Forward(params, h);
    z += neighbor_[l].Forward(params, nh);
    RowMatrix y = z.array().tanh().matrix();
    CheckFinite(y, "graph layer " + std::to_string(l));
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->neighbors.push_back(std::move(nh));
      cache->outputs.push_back(y);
    }
    h = std::move(y);
  }
  return h;
}

RowMatrix GraphNet::Backward(const Vector& params, const GraphTopology& graph,
                             const Cache& cache, const RowMatrix& dy,
                             Vector& grad) const {
  RowMatrix d = dy;
  for (int l = static_cast<int>(self_.size()) - 1; l >= 0; l--) {
    const RowMatrix& y = cache.outputs[l];
    RowMatrix dz = (d.array() * (1.0 - y.array().square())).matrix();
    RowMatrix dh = self_[l].Backward(params, cache.inputs[l], dz, grad);
    RowMatrix dnh = neighbor_[l].Backward(params, cache.neighbors[l], dz, grad);
    // tree adjacency is symmetric
    dh += graph.NeighborSum(dnh);
    CheckFinite(dh, "graph layer " + std::to_string(l) + " gradient");
    d = std::move(dh);
  }
  return d;
}

Mlp::Mlp(ParamVector& params, const std::string& name, std::vector<int> sizes)
    : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) {
    throw Error(ErrorKind::kShape, "mlp needs at least input and output sizes");
  }
  for (size_t i = 0; i + 1 < sizes_.size(); i++) {
    layers_.emplace_back(params, name + ".fc" + std::to_string(i), sizes_[i],
                         sizes_[i + 1]);
  }
}

void Mlp::Init(ParamVector& params, Rng& rng, double final_scale) const {
  for (size_t i = 0; i < layers_.size(); i++) {
    layers_[i].Init(params, rng, i + 1 == layers_.size() ? final_scale : 1.0);
  }
}

RowMatrix Mlp::Forward(const Vector& params, const RowMatrix& x,
                       Cache* cache) const {
  if (x.cols() != input_size()) {
    throw Error(ErrorKind::kShape, "mlp: expected " +
                                       std::to_string(input_size()) +
                                       " inputs, got " +
                                       std::to_string(x.cols()));
  }
  if (cache) *cache = Cache{};
  RowMatrix h = x;
  for (size_t i = 0; i < layers_.size(); i++) {
    RowMatrix z = layers_[i].Forward(params, h);
    if (cache) cache->inputs.push_back(h);
    if (i + 1 < layers_.size()) {
      z = z.array().tanh().matrix();
      if (cache) cache->outputs.push_back(z);
    }
    CheckFinite(z, "mlp layer " + std::to_string(i));
    h = std::move(z);
  }
  return h;
}

RowMatrix Mlp::Backward(const Vector& params, const Cache& cache,
                        const RowMatrix& dy, Vector& grad) const {
  RowMatrix d = dy;
  for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; i--) {
    if (i + 1 < static_cast<int>(layers_.size())) {
      const RowMatrix& y = cache.outputs[i];
      d = (d.array() * (1.0 - y.array().square())).matrix();
    }
    d = layers_[i].Backward(params, cache.inputs[i], d, grad);
    CheckFinite(d, "mlp layer " + std::to_string(i) + " gradient");
  }
  return d;
}

RowMatrix MeanPool(const RowMatrix& h, int num_nodes) {
  const Eigen::Index blocks = h.rows() / num_nodes;
  RowMatrix pooled(blocks, h.cols());
  for (Eigen::Index b = 0; b < blocks; b++) {
    pooled.row(b) = h.middleRows(b * num_nodes, num_nodes).colwise().mean();
  }
  return pooled;
}

RowMatrix MeanPoolBackward(const RowMatrix& dpool, int num_nodes) {
  RowMatrix dh(dpool.rows() * num_nodes, dpool.cols());
  const double inv = 1.0 / num_nodes;
  for (Eigen::Index b = 0; b < dpool.rows(); b++) {
    for (int u = 0; u < num_nodes; u++) {
      dh.row(b * num_nodes + u) = dpool.row(b) * inv;
    }
  }
  return dh;
}

PooledGraphNet::PooledGraphNet(ParamVector& params, const std::string& name,
                               int input_size, std::vector<int> graph_hidden,
                               int extra_size, std::vector<int> mlp_hidden,
                               int output_size)
    : extra_size_(extra_size),
      graph_(params, name + ".gnn", input_size, std::move(graph_hidden)) {
  std::vector<int> sizes{graph_.output_size() + extra_size};
  sizes.insert(sizes.end(), mlp_hidden.begin(), mlp_hidden.end());
  sizes.push_back(output_size);
  mlp_ = Mlp(params, name + ".mlp", sizes);
}

void PooledGraphNet::Init(ParamVector& params, Rng& rng,
                          double final_scale) const {
  graph_.Init(params, rng);
  mlp_.Init(params, rng, final_scale);
}

RowMatrix PooledGraphNet::Forward(const Vector& params,
                                  const GraphTopology& graph,
                                  const RowMatrix& x, const RowMatrix& extra,
                                  Cache* cache) const {
  RowMatrix h = graph_.Forward(params, graph, x, cache ? &cache->graph : nullptr);
  RowMatrix pooled = MeanPool(h, graph.num_nodes);
  if (extra.cols() != extra_size_ ||
      (extra_size_ > 0 && extra.rows() != pooled.rows())) {
    throw Error(ErrorKind::kShape, "pooled graph net: extra features must be " +
                                       std::to_string(pooled.rows()) + "x" +
                                       std::to_string(extra_size_));
  }
  RowMatrix joined(pooled.rows(), pooled.cols() + extra_size_);
  joined.leftCols(pooled.cols()) = pooled;
  if (extra_size_ > 0) joined.rightCols(extra_size_) = extra;
  return mlp_.Forward(params, joined, cache ? &cache->mlp : nullptr);
}

void PooledGraphNet::Backward(const Vector& params, const GraphTopology& graph,
                              const Cache& cache, const RowMatrix& dy,
                              Vector& grad) const {
  RowMatrix djoined = mlp_.Backward(params, cache.mlp, dy, grad);
  RowMatrix dpooled = djoined.leftCols(graph_.output_size());
  graph_.Backward(params, graph, cache.graph,
                  MeanPoolBackward(dpooled, graph.num_nodes), grad);
}

double GaussianLogProb(std::span<const double> action,
                       std::span<const double> mean,
                       std::span<const double> log_std) {
  if (action.size() != mean.size() || mean.size() != log_std.size()) {
    throw Error(ErrorKind::kShape, "gaussian: dimension mismatch");
  }
  double logp = 0.0;
  for (size_t i = 0; i < action.size(); i++) {
    double z = (action[i] - mean[i]) * std::exp(-log_std[i]);
    logp += -0.5 * z * z - log_std[i] - 0.5 * kLog2Pi;
  }
  return logp;
}

double SampleGaussian(double mean, double log_std, Rng& rng) {
  if (!std::isfinite(mean) || !std::isfinite(log_std)) {
    throw Error(ErrorKind::kNumeric, "gaussian: non-finite parameters");
  }
  return mean + std::exp(log_std) * rng.Normal();
}

Vector LogSoftmax(std::span<const double> logits) {
  double top = -INFINITY;
  for (double l : logits) {
    if (!std::isfinite(l)) {
      throw Error(ErrorKind::kNumeric, "categorical: non-finite logits");
    }
    top = std::max(top, l);
  }
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - top);
  double log_z = top + std::log(sum);
  Vector out(logits.size());
  for (size_t i = 0; i < logits.size(); i++) out(i) = logits[i] - log_z;
  return out;
}

int SampleCategorical(std::span<const double> logits, Rng& rng) {
  Vector logp = LogSoftmax(logits);
  double u = rng.Uniform();
  double cumulative = 0.0;
  for (Eigen::Index i = 0; i < logp.size(); i++) {
    cumulative += std::exp(logp(i));
    if (u < cumulative) return static_cast<int>(i);
  }
  return static_cast<int>(logp.size()) - 1;
}

}  // namespace mece
