#ifndef MECE_NETS_H_
#define MECE_NETS_H_

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mece/rng.h"

namespace mece {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Named slice of a flat parameter vector.
struct ParamSegment {
  std::string name;
  int offset = 0;
  int rows = 0;
  int cols = 0;
  int size() const { return rows * cols; }
};

// Flattened trainable parameters of one network plus the layout that maps
// them back to named matrices. Flatten/unflatten is the identity on `values`.
struct ParamVector {
  Vector values;
  std::vector<ParamSegment> segments;

  int size() const { return static_cast<int>(values.size()); }
  // allocates a segment and returns its offset
  int Allocate(const std::string& name, int rows, int cols);
  Vector Zeros() const { return Vector::Zero(values.size()); }

  // named matrices (row-major) keyed by segment name
  std::vector<std::pair<std::string, RowMatrix>> Unflatten() const;
  void Flatten(const std::vector<std::pair<std::string, RowMatrix>>& named);
};

nlohmann::json ParamVectorToJson(const ParamVector& params);
// Throws ErrorKind::kSchema when names or shapes disagree with `layout`.
void ParamVectorFromJson(const nlohmann::json& doc, ParamVector& layout);

// Affine layer y = x W^T + b over a batch of row vectors.
struct Dense {
  int in = 0;
  int out = 0;
  int weight = 0;  // offset of W (out x in, row-major)
  int bias = -1;   // -1 when the layer has no bias

  Dense() = default;
  Dense(ParamVector& params, const std::string& name, int in, int out,
        bool with_bias = true);
  // orthogonal-like init: Gaussian rows scaled to norm `scale`, zero bias
  void Init(ParamVector& params, Rng& rng, double scale) const;
  RowMatrix Forward(const Vector& params, const RowMatrix& x) const;
  // accumulates into grad, returns dL/dx
  RowMatrix Backward(const Vector& params, const RowMatrix& x,
                     const RowMatrix& dy, Vector& grad) const;
};

// Tree adjacency shared by a batch of graphs with identical topology. A batch
// stacks B graphs of n nodes as B*n rows.
struct GraphTopology {
  int num_nodes = 0;
  std::vector<std::vector<int>> neighbors;

  static GraphTopology FromParents(std::span<const int> parents);
  // rows of sum over tree neighbors, per stacked graph
  RowMatrix NeighborSum(const RowMatrix& h) const;
};

// GraphConv stack: h'_u = tanh(W1 h_u + W2 sum_{v in N(u)} h_v + b).
class GraphNet {
 public:
  struct Cache {
    std::vector<RowMatrix> inputs;     // per layer input
    std::vector<RowMatrix> neighbors;  // per layer neighbor sums
    std::vector<RowMatrix> outputs;    // per layer output (post tanh)
  };

  GraphNet() = default;
  GraphNet(ParamVector& params, const std::string& name, int input_size,
           std::vector<int> hidden);

  void Init(ParamVector& params, Rng& rng) const;
  int input_size() const { return input_size_; }
  int output_size() const {
    return hidden_.empty() ? input_size_ : hidden_.back();
  }

  // x: B*n rows of node features. Throws kShape on size mismatch and
  // kNumeric (with layer index) on non-finite activations.
  RowMatrix Forward(const Vector& params, const GraphTopology& graph,
                    const RowMatrix& x, Cache* cache = nullptr) const;
  RowMatrix Backward(const Vector& params, const GraphTopology& graph,
                     const Cache& cache, const RowMatrix& dy,
                     Vector& grad) const;

 private:
  int input_size_ = 0;
  std::vector<int> hidden_;
  std::vector<Dense> self_, neighbor_;
};

// tanh MLP with an affine output layer.
class Mlp {
 public:
  struct Cache {
    std::vector<RowMatrix> inputs;   // per layer input
    std::vector<RowMatrix> outputs;  // per hidden layer output (post tanh)
  };

  Mlp() = default;
  // sizes = {input, hidden..., output}
  Mlp(ParamVector& params, const std::string& name, std::vector<int> sizes);

  void Init(ParamVector& params, Rng& rng, double final_scale) const;
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  const std::vector<Dense>& layers() const { return layers_; }

  RowMatrix Forward(const Vector& params, const RowMatrix& x,
                    Cache* cache = nullptr) const;
  RowMatrix Backward(const Vector& params, const Cache& cache,
                     const RowMatrix& dy, Vector& grad) const;

 private:
  std::vector<int> sizes_;
  std::vector<Dense> layers_;
};

// Mean over the n node rows of each stacked graph: (B*n) x d -> B x d.
RowMatrix MeanPool(const RowMatrix& h, int num_nodes);
RowMatrix MeanPoolBackward(const RowMatrix& dpool, int num_nodes);

// GraphNet, mean pool, concat with per-graph extras, then an Mlp:
// (B*n) x d node rows plus B x e extras -> B x out.
class PooledGraphNet {
 public:
  struct Cache {
    GraphNet::Cache graph;
    Mlp::Cache mlp;
  };

  PooledGraphNet() = default;
  PooledGraphNet(ParamVector& params, const std::string& name, int input_size,
                 std::vector<int> graph_hidden, int extra_size,
                 std::vector<int> mlp_hidden, int output_size);

  void Init(ParamVector& params, Rng& rng, double final_scale) const;
  int extra_size() const { return extra_size_; }

  RowMatrix Forward(const Vector& params, const GraphTopology& graph,
                    const RowMatrix& x, const RowMatrix& extra,
                    Cache* cache = nullptr) const;
  // parameter gradients only
  void Backward(const Vector& params, const GraphTopology& graph,
                const Cache& cache, const RowMatrix& dy, Vector& grad) const;

 private:
  int extra_size_ = 0;
  GraphNet graph_;
  Mlp mlp_;
};

// Diagonal Gaussian. log N(a; mean, exp(log_std)) summed over dims.
double GaussianLogProb(std::span<const double> action,
                       std::span<const double> mean,
                       std::span<const double> log_std);
// d logp / d mean and d logp / d log_std for one dimension
inline double GaussianDMean(double a, double mean, double log_std) {
  double var = std::exp(2.0 * log_std);
  return (a - mean) / var;
}
inline double GaussianDLogStd(double a, double mean, double log_std) {
  double z = (a - mean) * std::exp(-log_std);
  return z * z - 1.0;
}
double SampleGaussian(double mean, double log_std, Rng& rng);

// Categorical over softmax(logits). Throws kNumeric on non-finite logits.
Vector LogSoftmax(std::span<const double> logits);
int SampleCategorical(std::span<const double> logits, Rng& rng);

}  // namespace mece

#endif  // MECE_NETS_H_
