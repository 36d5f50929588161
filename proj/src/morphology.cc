#include "mece/morphology.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <unordered_map>

#include "mece/error.h"

namespace mece {

int Morphology::head_id() const {
  for (const auto& node : nodes_) {
    if (node.parent == kNoParent) return node.id;
  }
  throw Error(ErrorKind::kState, "morphology has no head");
}

int Morphology::IndexOf(int id) const {
  for (int i = 0; i < size(); i++) {
    if (nodes_[i].id == id) return i;
  }
  return -1;
}

std::vector<int> Morphology::ParentIndices() const {
  std::unordered_map<int, int> index;
  for (int i = 0; i < size(); i++) index[nodes_[i].id] = i;
  std::vector<int> parents(nodes_.size(), -1);
  for (int i = 0; i < size(); i++) {
    if (nodes_[i].parent != kNoParent) parents[i] = index.at(nodes_[i].parent);
  }
  return parents;
}

std::vector<int> Morphology::ChildCounts() const {
  std::vector<int> counts(nodes_.size(), 0);
  auto parents = ParentIndices();
  for (int p : parents) {
    if (p >= 0) counts[p]++;
  }
  return counts;
}

std::vector<int> Morphology::Depths() const {
  auto parents = ParentIndices();
  std::vector<int> depth(nodes_.size(), 0);
  // parents precede children
  for (int i = 0; i < size(); i++) {
    if (parents[i] >= 0) depth[i] = depth[parents[i]] + 1;
  }
  return depth;
}

int Morphology::NextId() const {
  int next = 0;
  for (const auto& node : nodes_) next = std::max(next, node.id + 1);
  return next;
}

MorphAction MorphAction::Identity(int num_nodes) {
  MorphAction action;
  action.topology.assign(num_nodes, TopologyChoice::kNoChange);
  action.deltas.assign(num_nodes, Attributes{});
  return action;
}

Morphology InitialMorphology(int num_lv1, int max_nodes) {
  if (num_lv1 < 0 || num_lv1 > kMaxChildren) {
    throw Error(ErrorKind::kValidation,
                "initial morphology: num_lv1 must be in [0, 3], got " +
                    std::to_string(num_lv1));
  }
  if (num_lv1 + 1 > max_nodes) {
    throw Error(ErrorKind::kValidation, "initial morphology exceeds node cap");
  }
  std::vector<JointNode> nodes;
  nodes.push_back({0, kNoParent, {}});
  for (int i = 0; i < num_lv1; i++) nodes.push_back({i + 1, 0, {}});
  return Morphology(std::move(nodes), max_nodes);
}

MorphOutcome ApplyMorphAction(const Morphology& m, const MorphAction& action) {
  const int n = m.size();
  if (static_cast<int>(action.topology.size()) != n ||
      static_cast<int>(action.deltas.size()) != n) {
    throw Error(ErrorKind::kShape, "morph action size does not match node count");
  }

  MorphOutcome out;
  std::vector<JointNode> nodes = m.nodes();
  int next_id = m.NextId();

  auto child_count = [&nodes](int id) {
    return static_cast<int>(std::count_if(
        nodes.begin(), nodes.end(),
        [id](const JointNode& node) { return node.parent == id; }));
  };

  // pass 1: topology, in the stable order of the original nodes
  for (int i = 0; i < n; i++) {
    const JointNode& original = m.nodes()[i];
    switch (action.topology[i]) {
      case TopologyChoice::kNoChange:
        break;
      case TopologyChoice::kAddJoint: {
        bool present = std::any_of(nodes.begin(), nodes.end(),
                                   [&](const JointNode& node) {
                                     return node.id == original.id;
                                   });
        if (!present || child_count(original.id) >= kMaxChildren ||
            static_cast<int>(nodes.size()) >= m.max_nodes()) {
          out.rejected++;
          break;
        }
        nodes.push_back({next_id++, original.id, {}});
        out.added++;
        break;
      }
      case TopologyChoice::kDelJoint: {
        auto it = std::find_if(nodes.begin(), nodes.end(),
                               [&](const JointNode& node) {
                                 return node.id == original.id;
                               });
        if (original.parent == kNoParent || it == nodes.end() ||
            child_count(original.id) > 0) {
          out.rejected++;
          break;
        }
        nodes.erase(it);
        out.deleted++;
        break;
      }
    }
  }

  // pass 2: attribute deltas on surviving original nodes
  for (int i = 0; i < n; i++) {
    const Attributes& delta = action.deltas[i];
    for (double d : delta) {
      if (!std::isfinite(d)) {
        throw Error(ErrorKind::kInput, "non-finite attribute delta");
      }
      out.delta_sq_norm += d * d;
    }
    int id = m.nodes()[i].id;
    for (auto& node : nodes) {
      if (node.id != id) continue;
      for (int k = 0; k < kNumAttrs; k++) {
        node.attrs[k] = std::clamp(node.attrs[k] + delta[k], -1.0, 1.0);
      }
    }
  }

  out.morphology = Morphology(std::move(nodes), m.max_nodes());
  return out;
}

std::vector<std::string> Validate(const Morphology& m) {
  std::vector<std::string> violations;
  const auto& nodes = m.nodes();
  if (nodes.empty()) {
    violations.push_back("morphology has no nodes");
    return violations;
  }
  if (m.size() > m.max_nodes()) {
    violations.push_back("node count " + std::to_string(m.size()) +
                         " exceeds cap " + std::to_string(m.max_nodes()));
  }

  int heads = 0;
  std::set<int> ids;
  std::set<int> seen;
  for (size_t i = 0; i < nodes.size(); i++) {
    const auto& node = nodes[i];
    const std::string where = "node " + std::to_string(node.id);
    if (!ids.insert(node.id).second) {
      violations.push_back(where + ": duplicate id");
    }
    if (node.parent == kNoParent) {
      heads++;
      if (i != 0) violations.push_back(where + ": head is not the first node");
    } else if (!seen.count(node.parent)) {
      // parent missing, or out of order (which also rules out cycles)
      bool exists = std::any_of(nodes.begin(), nodes.end(),
                                [&](const JointNode& other) {
                                  return other.id == node.parent;
                                });
      violations.push_back(where + (exists ? ": parent does not precede child"
                                           : ": parent not found (disconnected)"));
    }
    seen.insert(node.id);
    for (int k = 0; k < kNumAttrs; k++) {
      double a = node.attrs[k];
      if (!std::isfinite(a) || a < -1.0 || a > 1.0) {
        violations.push_back(where + ": attr " + std::to_string(k) +
                             " out of [-1,1]");
      }
    }
  }
  if (heads != 1) {
    violations.push_back("expected exactly one head, found " +
                         std::to_string(heads));
  }

  std::unordered_map<int, int> children;
  for (const auto& node : nodes) {
    if (node.parent != kNoParent) children[node.parent]++;
  }
  for (const auto& [id, count] : children) {
    if (count > kMaxChildren) {
      violations.push_back("node " + std::to_string(id) + ": " +
                           std::to_string(count) + " children exceeds limit 3");
    }
  }
  return violations;
}

nlohmann::json MorphologyToJson(const Morphology& m) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& node : m.nodes()) {
    nlohmann::json entry;
    entry["id"] = node.id;
    entry["parent"] = node.parent == kNoParent ? nlohmann::json(nullptr)
                                               : nlohmann::json(node.parent);
    entry["attrs"] = node.attrs;
    nodes.push_back(entry);
  }
  return {{"schema_version", kMorphologySchemaVersion},
          {"head", m.head_id()},
          {"max_nodes", m.max_nodes()},
          {"nodes", nodes}};
}

namespace {

[[noreturn]] void SchemaError(const std::string& path, const std::string& what) {
  throw Error(ErrorKind::kSchema, path + ": " + what);
}

const nlohmann::json& Require(const nlohmann::json& obj, const char* key,
                              const std::string& path) {
  if (!obj.is_object()) SchemaError(path, "expected object");
  auto it = obj.find(key);
  if (it == obj.end()) SchemaError(path + "." + key, "missing required field");
  return *it;
}

}  // namespace

Morphology MorphologyFromJson(const nlohmann::json& doc) {
  const auto& version = Require(doc, "schema_version", "$");
  if (!version.is_number_integer() ||
      version.get<int>() != kMorphologySchemaVersion) {
    SchemaError("$.schema_version", "unsupported version");
  }
  const auto& head = Require(doc, "head", "$");
  if (!head.is_number_integer()) SchemaError("$.head", "expected integer");
  int max_nodes = 16;
  if (doc.contains("max_nodes")) {
    if (!doc["max_nodes"].is_number_integer()) {
      SchemaError("$.max_nodes", "expected integer");
    }
    max_nodes = doc["max_nodes"].get<int>();
  }
  const auto& nodes_doc = Require(doc, "nodes", "$");
  if (!nodes_doc.is_array()) SchemaError("$.nodes", "expected array");

  std::vector<JointNode> nodes;
  for (size_t i = 0; i < nodes_doc.size(); i++) {
    const std::string path = "$.nodes[" + std::to_string(i) + "]";
    const auto& entry = nodes_doc[i];
    JointNode node;
    const auto& id = Require(entry, "id", path);
    if (!id.is_number_integer()) SchemaError(path + ".id", "expected integer");
    node.id = id.get<int>();
    const auto& parent = Require(entry, "parent", path);
    if (parent.is_null()) {
      node.parent = kNoParent;
    } else if (parent.is_number_integer()) {
      node.parent = parent.get<int>();
    } else {
      SchemaError(path + ".parent", "expected integer or null");
    }
    const auto& attrs = Require(entry, "attrs", path);
    if (!attrs.is_array() || attrs.size() != kNumAttrs) {
      SchemaError(path + ".attrs", "expected array of 5 numbers");
    }
    for (int k = 0; k < kNumAttrs; k++) {
      if (!attrs[k].is_number()) {
        SchemaError(path + ".attrs[" + std::to_string(k) + "]",
                    "expected number");
      }
      node.attrs[k] = attrs[k].get<double>();
    }
    nodes.push_back(node);
  }
  Morphology m(std::move(nodes), max_nodes);
  int head_index = m.IndexOf(head.get<int>());
  if (head_index < 0 || m.nodes()[head_index].parent != kNoParent) {
    SchemaError("$.head", "does not name a parentless node");
  }
  return m;
}

double AttributeRanges::Denormalize(Attr attr, double value) const {
  const std::array<double, 2>* range = nullptr;
  switch (attr) {
    case kBoneLength: range = &bone_length; break;
    case kBoneAngle: range = &bone_angle; break;
    case kBoneSize: range = &bone_size; break;
    case kMotorGear: range = &motor_gear; break;
    case kJointRange: range = &joint_range; break;
  }
  double t = 0.5 * (std::clamp(value, -1.0, 1.0) + 1.0);
  return (*range)[0] + t * ((*range)[1] - (*range)[0]);
}

}  // namespace mece
