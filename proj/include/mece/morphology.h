#ifndef MECE_MORPHOLOGY_H_
#define MECE_MORPHOLOGY_H_

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mece {

// Normalized joint attributes z_u. The bone vector is stored in polar form
// (length, angle relative to the parent bone) so the all-zero default is a
// non-degenerate, straight-down bone.
enum Attr : int {
  kBoneLength = 0,
  kBoneAngle = 1,
  kBoneSize = 2,
  kMotorGear = 3,
  kJointRange = 4,
};
inline constexpr int kNumAttrs = 5;
inline constexpr int kMaxChildren = 3;
inline constexpr int kNoParent = -1;
inline constexpr int kMorphologySchemaVersion = 1;

using Attributes = std::array<double, kNumAttrs>;

struct JointNode {
  int id = 0;
  int parent = kNoParent;  // parent id; kNoParent marks the head
  Attributes attrs{};

  bool operator==(const JointNode&) const = default;
};

// Rooted joint tree G = (V, A, E). Nodes are kept in a stable order in which
// every parent precedes its children; bones are the implicit parent links.
class Morphology {
 public:
  Morphology() = default;
  explicit Morphology(std::vector<JointNode> nodes, int max_nodes = 16)
      : nodes_(std::move(nodes)), max_nodes_(max_nodes) {}

  const std::vector<JointNode>& nodes() const { return nodes_; }
  std::vector<JointNode>& mutable_nodes() { return nodes_; }
  int size() const { return static_cast<int>(nodes_.size()); }
  int max_nodes() const { return max_nodes_; }
  int head_id() const;

  // index of node with the given id, or -1
  int IndexOf(int id) const;
  // parent index per node (-1 for the head)
  std::vector<int> ParentIndices() const;
  std::vector<int> ChildCounts() const;
  // depth of each node, head = 0
  std::vector<int> Depths() const;
  int NextId() const;

  bool operator==(const Morphology& other) const {
    return nodes_ == other.nodes_ && max_nodes_ == other.max_nodes_;
  }

 private:
  std::vector<JointNode> nodes_;
  int max_nodes_ = 16;
};

enum class TopologyChoice : int { kAddJoint = 0, kDelJoint = 1, kNoChange = 2 };
inline constexpr int kNumTopologyChoices = 3;

// One morphology-policy action: a choice and an attribute delta per node, in
// the node order of the morphology the action was sampled for.
struct MorphAction {
  std::vector<TopologyChoice> topology;
  std::vector<Attributes> deltas;

  static MorphAction Identity(int num_nodes);
};

struct MorphOutcome {
  Morphology morphology;
  int added = 0;
  int deleted = 0;
  int rejected = 0;            // soft rejections (head delete, full node, ...)
  double delta_sq_norm = 0.0;  // squared L2 norm of the attribute deltas
  // topology changes + squared delta norm; the penalty term of r_m
  double ActionCost() const { return added + deleted + delta_sq_norm; }
};

// Head plus `num_lv1` level-1 joints, all attributes zero. Throws
// ErrorKind::kValidation when num_lv1 exceeds the child limit.
Morphology InitialMorphology(int num_lv1, int max_nodes = 16);

// Two-pass traversal: topology choices first (AddJoint appends a default child
// when the child limit and node cap permit, DelJoint removes a leaf), then the
// attribute deltas of the surviving original nodes, clipped to [-1, 1].
// Invalid choices are soft-rejected and counted. The input is not modified.
MorphOutcome ApplyMorphAction(const Morphology& m, const MorphAction& action);

// All constraint violations; empty means valid.
std::vector<std::string> Validate(const Morphology& m);
inline bool IsValid(const Morphology& m) { return Validate(m).empty(); }

nlohmann::json MorphologyToJson(const Morphology& m);
// Throws ErrorKind::kSchema with a JSON path on malformed input.
Morphology MorphologyFromJson(const nlohmann::json& doc);

// Physical ranges used to denormalize attributes; zero maps to mid-range.
struct AttributeRanges {
  std::array<double, 2> bone_length{0.5, 1.7};
  std::array<double, 2> bone_angle{-1.5707963267948966, 1.5707963267948966};
  std::array<double, 2> bone_size{0.05, 0.15};
  std::array<double, 2> motor_gear{20.0, 100.0};
  std::array<double, 2> joint_range{0.2, 1.2};

  double Denormalize(Attr attr, double value) const;
};

}  // namespace mece

#endif  // MECE_MORPHOLOGY_H_
