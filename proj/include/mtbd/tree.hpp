#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mtbd/model.hpp"

namespace mtbd {

// Times run backward: t is the time remaining until collection, leaves sampled
// at collection sit at t = 0 and the root has the largest time.
enum class Event { root, birth, type_change, sampled_leaf, death_leaf, unsampled_leaf };

std::string_view to_string(Event e);
Event event_from_string(std::string_view s);
bool is_leaf_event(Event e);

struct Node {
  int id = 0;
  std::optional<int> parent;
  double time = 0.0;
  Event event = Event::root;
  // Type of the segment below this node (for leaves: the type they end in).
  int state = 0;
  std::optional<double> affinity;

  bool operator==(const Node&) const = default;
};

struct Tree {
  std::vector<Node> nodes;
  std::size_t rho_index = 0;

  const Node& root() const;
  double root_time() const { return root().time; }
  std::size_t leaf_count(Event kind = Event::sampled_leaf) const;
  // Sampled leaves per type; vector of length n_types.
  std::vector<std::size_t> leaf_state_counts(std::size_t n_types) const;

  bool operator==(const Tree&) const = default;
};

enum class TreeKind { observed, full };

inline constexpr double kMinBranchLength = 1e-12;

struct ValidationIssue {
  std::optional<int> node_id;
  std::string message;
};

// Every violated invariant. Observed trees admit only root/birth/type_change/
// sampled_leaf events. n_types == 0 skips the state range check.
std::vector<ValidationIssue> validate(const Tree& tree, TreeKind kind, std::size_t n_types = 0);
// Throws ValidationError listing every issue.
void require_valid(const Tree& tree, TreeKind kind, std::size_t n_types = 0);

// Stretch of branch between two adjacent events. `state` is the type along the
// segment; for a type change, `end_state` is the type after it.
struct Segment {
  double start_time = 0.0;
  double end_time = 0.0;
  int state = 0;
  Event end_event = Event::sampled_leaf;
  int end_state = 0;
  int node_id = 0;  // node at the lower end
  std::array<int, 2> children{-1, -1};  // indices into the segment list

  double length() const { return start_time - end_time; }
};

// Children before parents; the root segment (starting at root_time) is last.
// Requires a tree that passes validate().
std::vector<Segment> postorder_segments(const Tree& tree);

// {"root_time": r, "rho_index": i, "nodes": [{"id","parent","time","event","state","affinity"}]}
std::string tree_to_json(const Tree& tree);
Tree tree_from_json(const std::string& text);
std::string trees_to_json(const std::vector<Tree>& trees);
// Accepts a single tree object, an array of trees, or {"trees": [...]}.
std::vector<Tree> trees_from_json(const std::string& text);

struct NewickImportOptions {
  int root_state = 0;
  // Time of the root event; defaults to the top node's height plus its stem.
  std::optional<double> root_age;
  std::size_t rho_index = 0;
  // Leaf depths may differ by this much before the tree counts as non-ultrametric.
  double ultrametric_tol = 1e-6;
};

// Newick with branch comments [&mutations={(t,a),...}]: t is backward time,
// a the affinity after the mutation. Mutations that move the affinity into
// another bin become type_change nodes; same-bin mutations collapse.
Tree from_annotated_newick(std::string_view text, const TypeSpace& space,
                           const NewickImportOptions& opts = {});

}  // namespace mtbd
