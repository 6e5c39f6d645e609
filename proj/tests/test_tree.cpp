#include <doctest.h>

#include <algorithm>
#include <map>

#include "mtbd/error.hpp"
#include "mtbd/fixtures.hpp"
#include "mtbd/tree.hpp"

using namespace mtbd;

namespace {

bool has_issue(const std::vector<ValidationIssue>& issues, std::string_view text) {
  return std::any_of(issues.begin(), issues.end(),
                     [&](const ValidationIssue& i) { return i.message.find(text) != std::string::npos; });
}

Tree two_node() {
  Tree t;
  t.nodes = {{0, std::nullopt, 5.0, Event::root, 1, std::nullopt},
             {1, 0, 0.0, Event::sampled_leaf, 1, std::nullopt}};
  return t;
}

// root(4) -> birth(3) -> {type_change(2) -> birth(1) -> {leaf, leaf}, leaf}
Tree branching() {
  Tree t;
  t.nodes = {{0, std::nullopt, 4.0, Event::root, 0, std::nullopt},
             {1, 0, 3.0, Event::birth, 0, std::nullopt},
             {2, 1, 2.0, Event::type_change, 1, 0.5},
             {3, 2, 1.0, Event::birth, 1, std::nullopt},
             {4, 3, 0.0, Event::sampled_leaf, 1, 0.5},
             {5, 3, 0.0, Event::sampled_leaf, 1, 0.5},
             {6, 1, 0.0, Event::sampled_leaf, 0, std::nullopt}};
  return t;
}

}  // namespace

TEST_CASE("minimal tree is valid") {
  CHECK(validate(two_node(), TreeKind::observed, 2).empty());
  CHECK(validate(branching(), TreeKind::observed, 2).empty());
}

TEST_CASE("validate reports invariant violations") {
  Tree t = two_node();
  t.nodes[1].time = 5.0;
  t.nodes[1].event = Event::death_leaf;
  CHECK(has_issue(validate(t, TreeKind::full), "non-positive branch"));

  t = branching();
  t.nodes[2].state = 0;
  CHECK(has_issue(validate(t, TreeKind::observed), "type change to the same state"));

  t = branching();
  t.nodes[6].parent = 42;
  CHECK(has_issue(validate(t, TreeKind::observed), "dangling parent"));

  t = branching();
  t.nodes.push_back({7, std::nullopt, 6.0, Event::root, 0, std::nullopt});
  CHECK(has_issue(validate(t, TreeKind::observed), "multiple roots"));

  t = branching();
  t.nodes[6].parent = 3;  // birth node with 3 children, other birth with 1
  CHECK(has_issue(validate(t, TreeKind::observed), "children"));

  t = branching();
  t.nodes[4].event = Event::death_leaf;
  t.nodes[4].time = 0.5;
  CHECK(has_issue(validate(t, TreeKind::observed), "unobserved leaf"));
  CHECK(validate(t, TreeKind::full).empty());

  t = branching();
  t.nodes[1].parent = 3;  // cycle 1 -> 3 -> 2 -> 1
  CHECK(has_issue(validate(t, TreeKind::observed), "cycle"));

  CHECK_THROWS_AS(require_valid(Tree{}, TreeKind::observed), ValidationError);
}

TEST_CASE("postorder segments") {
  CHECK(postorder_segments(two_node()).size() == 1);

  Tree cherry;
  cherry.nodes = {{0, std::nullopt, 2.0, Event::root, 0, std::nullopt},
                  {1, 0, 1.0, Event::birth, 0, std::nullopt},
                  {2, 1, 0.0, Event::sampled_leaf, 0, std::nullopt},
                  {3, 1, 0.0, Event::sampled_leaf, 0, std::nullopt}};
  const auto cs = postorder_segments(cherry);
  REQUIRE(cs.size() == 3);
  CHECK(cs.back().start_time == 2.0);
  CHECK(cs.back().end_event == Event::birth);

  const Tree t = branching();
  const auto segs = postorder_segments(t);
  CHECK(segs.size() == t.nodes.size() - 1);
  CHECK(segs.back().start_time == t.root_time());
  // Children precede parents, and the segment-to-node map reconstructs topology.
  std::map<int, std::size_t> seg_of_node;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    seg_of_node[segs[i].node_id] = i;
    for (int c : segs[i].children)
      if (c >= 0) CHECK(static_cast<std::size_t>(c) < i);
  }
  double seg_len = 0.0, branch_len = 0.0;
  for (const auto& s : segs) seg_len += s.length();
  for (const auto& n : t.nodes) {
    if (!n.parent) continue;
    const Node& p = *std::find_if(t.nodes.begin(), t.nodes.end(), [&](const Node& m) { return m.id == *n.parent; });
    branch_len += p.time - n.time;
    if (p.parent) {
      const auto& ps = segs[seg_of_node.at(p.id)];
      CHECK(std::count(ps.children.begin(), ps.children.end(), static_cast<int>(seg_of_node.at(n.id))) == 1);
    }
  }
  CHECK(seg_len == doctest::Approx(branch_len));
  // The type-change segment carries the parent state and records the new one.
  const auto& tc = segs[seg_of_node.at(2)];
  CHECK(tc.state == 0);
  CHECK(tc.end_state == 1);
}

TEST_CASE("json round trip and errors") {
  const Tree t = branching();
  const std::string text = tree_to_json(t);
  CHECK(tree_from_json(text) == t);
  CHECK(tree_to_json(tree_from_json(text)) == text);

  const std::vector<Tree> ts{t, two_node()};
  CHECK(trees_from_json(trees_to_json(ts)) == ts);

  CHECK_THROWS_WITH_AS(tree_from_json(R"({"nodes": []})"), doctest::Contains("no root"), ValidationError);
  CHECK_THROWS_WITH_AS(
      tree_from_json(R"({"nodes": [{"id": 0, "parent": null, "time": 1, "event": "root", "state": 0},
                                   {"id": 1, "parent": 9, "time": 0, "event": "sampled_leaf", "state": 0}]})"),
      doctest::Contains("dangling"), ValidationError);
  CHECK_THROWS_WITH_AS(
      tree_from_json(R"({"nodes": [{"id": 0, "parent": null, "time": 1, "event": "speciation", "state": 0}]})"),
      doctest::Contains("unknown event"), ValidationError);
  CHECK_THROWS_AS(tree_from_json("{\"nodes\": ["), ValidationError);
}

TEST_CASE("annotated newick import") {
  const TypeSpace space = fixtures::paper_type_space();
  NewickImportOptions opts;
  opts.root_state = 4;
  const Tree plain = from_annotated_newick("(A:1,B:1):1;", space, opts);
  // Root, the birth at the top node, and two leaves.
  CHECK(plain.nodes.size() == 4);
  CHECK(plain.root_time() == doctest::Approx(2.0));
  for (const auto& n : plain.nodes) CHECK(n.state == 4);
  CHECK(plain.leaf_count() == 2);

  // Crossing from bin 4 (0.08) into bin 5 (0.8) inserts one type change.
  const Tree crossing = from_annotated_newick("(A:1[&mutations={(0.5,0.9)}],B:1):1;", space, opts);
  std::size_t changes = 0;
  for (const auto& n : crossing.nodes)
    if (n.event == Event::type_change) {
      ++changes;
      CHECK(n.time == doctest::Approx(0.5));
      CHECK(n.state == 5);
    }
  CHECK(changes == 1);

  // Two mutations staying inside bin 4 collapse away.
  const Tree same = from_annotated_newick("(A:1[&mutations={(0.7,0.1),(0.3,0.2)}],B:1):1;", space, opts);
  CHECK(same.nodes.size() == 4);

  CHECK_THROWS_AS(from_annotated_newick("(A:1[&mutations={(1.5,0.9)}],B:1):1;", space, opts), ValidationError);
  CHECK_THROWS_AS(from_annotated_newick("(A:1[&mutations={(0.5 0.9)}],B:1):1;", space, opts), ValidationError);
  CHECK_THROWS_AS(from_annotated_newick("(A:1,B:1", space, opts), ValidationError);

  // Import then JSON round trip is idempotent.
  CHECK(tree_from_json(tree_to_json(crossing)) == crossing);
}
