#include "mtbd/tree.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <unordered_map>

#include <json.hpp>

#include "mtbd/error.hpp"

namespace mtbd {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<Event, std::string_view>, 6> kEventNames{{
    {Event::root, "root"},
    {Event::birth, "birth"},
    {Event::type_change, "type_change"},
    {Event::sampled_leaf, "sampled_leaf"},
    {Event::death_leaf, "death_leaf"},
    {Event::unsampled_leaf, "unsampled_leaf"},
}};

std::size_t expected_arity(Event e) {
  switch (e) {
    case Event::root:
    case Event::type_change:
      return 1;
    case Event::birth:
      return 2;
    default:
      return 0;
  }
}

}  // namespace

std::string_view to_string(Event e) {
  for (const auto& [ev, name] : kEventNames)
    if (ev == e) return name;
  return "unknown";
}

Event event_from_string(std::string_view s) {
  for (const auto& [ev, name] : kEventNames)
    if (name == s) return ev;
  throw ValidationError("unknown event kind '" + std::string(s) + "'");
}

bool is_leaf_event(Event e) {
  return e == Event::sampled_leaf || e == Event::death_leaf || e == Event::unsampled_leaf;
}

const Node& Tree::root() const {
  for (const auto& n : nodes)
    if (!n.parent) return n;
  throw ValidationError("no root");
}

std::size_t Tree::leaf_count(Event kind) const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [kind](const Node& n) { return n.event == kind; }));
}

std::vector<std::size_t> Tree::leaf_state_counts(std::size_t n_types) const {
  std::vector<std::size_t> counts(n_types, 0);
  for (const auto& n : nodes)
    if (n.event == Event::sampled_leaf) {
      if (n.state < 0 || static_cast<std::size_t>(n.state) >= n_types)
        throw ValidationError("leaf state out of range");
      ++counts[static_cast<std::size_t>(n.state)];
    }
  return counts;
}

std::vector<ValidationIssue> validate(const Tree& tree, TreeKind kind, std::size_t n_types) {
  std::vector<ValidationIssue> issues;
  auto report = [&issues](std::optional<int> id, std::string msg) {
    issues.push_back({id, std::move(msg)});
  };

  if (tree.nodes.empty()) {
    report(std::nullopt, "no root");
    return issues;
  }

  std::unordered_map<int, std::size_t> index;
  for (std::size_t i = 0; i < tree.nodes.size(); ++i)
    if (!index.emplace(tree.nodes[i].id, i).second)
      report(tree.nodes[i].id, "duplicate node id");

  std::vector<std::size_t> arity(tree.nodes.size(), 0);
  std::size_t roots = 0;
  for (const auto& n : tree.nodes) {
    if (!n.parent) {
      ++roots;
      if (n.event != Event::root) report(n.id, "parentless node is not a root event");
      continue;
    }
    if (n.event == Event::root) report(n.id, "root event has a parent");
    const auto it = index.find(*n.parent);
    if (it == index.end()) {
      report(n.id, "dangling parent id " + std::to_string(*n.parent));
      continue;
    }
    ++arity[it->second];
    const Node& p = tree.nodes[it->second];
    if (!(n.time < p.time - kMinBranchLength)) report(n.id, "non-positive branch");
    if (n.event == Event::type_change) {
      if (n.state == p.state) report(n.id, "type change to the same state");
    } else if (n.state != p.state) {
      report(n.id, "state differs from parent without a type change");
    }
  }
  if (roots == 0) report(std::nullopt, "no root");
  if (roots > 1) report(std::nullopt, "multiple roots");

  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const Node& n = tree.nodes[i];
    if (arity[i] != expected_arity(n.event))
      report(n.id, std::string(to_string(n.event)) + " node has " + std::to_string(arity[i]) +
                       " children, expected " + std::to_string(expected_arity(n.event)));
    if (!(n.time >= 0.0) || !std::isfinite(n.time)) report(n.id, "time must be finite and >= 0");
    if ((n.event == Event::sampled_leaf || n.event == Event::unsampled_leaf) && n.time != 0.0)
      report(n.id, "surviving leaf must have time 0");
    if (n.event == Event::death_leaf && !(n.time > 0.0)) report(n.id, "death leaf at time 0");
    if (kind == TreeKind::observed &&
        (n.event == Event::death_leaf || n.event == Event::unsampled_leaf))
      report(n.id, "observed tree contains an unobserved leaf");
    if (n.state < 0 || (n_types > 0 && static_cast<std::size_t>(n.state) >= n_types))
      report(n.id, "state out of range");
  }

  // Cycle check: every node must reach a root within |nodes| steps.
  for (const auto& n : tree.nodes) {
    const Node* cur = &n;
    std::size_t steps = 0;
    while (cur->parent && steps <= tree.nodes.size()) {
      const auto it = index.find(*cur->parent);
      if (it == index.end()) break;
      cur = &tree.nodes[it->second];
      ++steps;
    }
    if (steps > tree.nodes.size()) {
      report(n.id, "cycle through parent links");
      break;
    }
  }
  return issues;
}

void require_valid(const Tree& tree, TreeKind kind, std::size_t n_types) {
  const auto issues = validate(tree, kind, n_types);
  if (issues.empty()) return;
  std::string msg = "invalid tree:";
  for (const auto& issue : issues) {
    msg += "\n  ";
    if (issue.node_id) msg += "node " + std::to_string(*issue.node_id) + ": ";
    msg += issue.message;
  }
  throw ValidationError(msg);
}

std::vector<Segment> postorder_segments(const Tree& tree) {
  std::unordered_map<int, std::size_t> index;
  index.reserve(tree.nodes.size());
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) index.emplace(tree.nodes[i].id, i);

  std::vector<std::vector<std::size_t>> children(tree.nodes.size());
  std::size_t root = tree.nodes.size();
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const auto& n = tree.nodes[i];
    if (n.parent)
      children[index.at(*n.parent)].push_back(i);
    else
      root = i;
  }
  if (root == tree.nodes.size() || children[root].size() != 1)
    throw ValidationError("postorder_segments: tree has no single-child root");

  std::vector<Segment> out;
  out.reserve(tree.nodes.size() - 1);
  std::vector<int> segment_of(tree.nodes.size(), -1);
  // Iterative postorder over nodes below the root.
  std::vector<std::pair<std::size_t, std::size_t>> stack{{children[root][0], 0}};
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < children[node].size()) {
      const std::size_t child = children[node][next++];
      stack.emplace_back(child, 0);
      continue;
    }
    const Node& n = tree.nodes[node];
    const Node& p = tree.nodes[index.at(*n.parent)];
    Segment s;
    s.start_time = p.time;
    s.end_time = n.time;
    s.state = p.state;
    s.end_event = n.event;
    s.end_state = n.state;
    s.node_id = n.id;
    for (std::size_t c = 0; c < children[node].size() && c < 2; ++c)
      s.children[c] = segment_of[children[node][c]];
    segment_of[node] = static_cast<int>(out.size());
    out.push_back(s);
    stack.pop_back();
  }
  return out;
}

namespace {

json tree_to_json_value(const Tree& tree) {
  json nodes = json::array();
  for (const auto& n : tree.nodes) {
    json jn;
    jn["id"] = n.id;
    jn["parent"] = n.parent ? json(*n.parent) : json(nullptr);
    jn["time"] = n.time;
    jn["event"] = std::string(to_string(n.event));
    jn["state"] = n.state;
    jn["affinity"] = n.affinity ? json(*n.affinity) : json(nullptr);
    nodes.push_back(std::move(jn));
  }
  json j;
  j["root_time"] = tree.nodes.empty() ? 0.0 : tree.root_time();
  j["rho_index"] = tree.rho_index;
  j["nodes"] = std::move(nodes);
  return j;
}

Tree tree_from_json_value(const json& j) {
  if (!j.is_object()) throw ValidationError("tree JSON: expected an object");
  Tree t;
  if (j.contains("rho_index")) t.rho_index = j.at("rho_index").get<std::size_t>();
  const json& nodes = j.at("nodes");
  if (!nodes.is_array()) throw ValidationError("tree JSON: nodes must be an array");
  for (const auto& jn : nodes) {
    Node n;
    n.id = jn.at("id").get<int>();
    if (jn.contains("parent") && !jn.at("parent").is_null()) n.parent = jn.at("parent").get<int>();
    n.time = jn.at("time").get<double>();
    n.event = event_from_string(jn.at("event").get<std::string>());
    n.state = jn.at("state").get<int>();
    if (jn.contains("affinity") && !jn.at("affinity").is_null())
      n.affinity = jn.at("affinity").get<double>();
    t.nodes.push_back(n);
  }
  if (t.nodes.empty()) throw ValidationError("tree JSON: no root");
  std::unordered_map<int, bool> ids;
  for (const auto& n : t.nodes) ids[n.id] = true;
  for (const auto& n : t.nodes)
    if (n.parent && !ids.count(*n.parent))
      throw ValidationError("tree JSON: node " + std::to_string(n.id) + " has dangling parent id " +
                            std::to_string(*n.parent));
  if (j.contains("root_time")) {
    const double rt = j.at("root_time").get<double>();
    if (rt != t.root_time()) throw ValidationError("tree JSON: root_time does not match root node");
  }
  return t;
}

template <typename F>
auto with_json_errors(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed tree JSON: ") + e.what());
  }
}

}  // namespace

std::string tree_to_json(const Tree& tree) { return tree_to_json_value(tree).dump(); }

Tree tree_from_json(const std::string& text) {
  return with_json_errors([&] { return tree_from_json_value(json::parse(text)); });
}

std::string trees_to_json(const std::vector<Tree>& trees) {
  json arr = json::array();
  for (const auto& t : trees) arr.push_back(tree_to_json_value(t));
  json j;
  j["trees"] = std::move(arr);
  return j.dump();
}

std::vector<Tree> trees_from_json(const std::string& text) {
  return with_json_errors([&] {
    const json j = json::parse(text);
    const json* arr = &j;
    if (j.is_object() && j.contains("trees")) arr = &j.at("trees");
    std::vector<Tree> out;
    if (arr->is_array()) {
      for (const auto& jt : *arr) out.push_back(tree_from_json_value(jt));
    } else {
      out.push_back(tree_from_json_value(j));
    }
    return out;
  });
}

// ---------------------------------------------------------------------------
// Annotated Newick import

namespace {

struct Mutation {
  double time;
  double affinity;
};

struct NewickNode {
  std::string label;
  double length = 0.0;
  bool has_length = false;
  std::vector<Mutation> mutations;
  std::vector<std::size_t> children;
};

class NewickParser {
 public:
  explicit NewickParser(std::string_view text) : s_(text) {}

  std::vector<NewickNode> parse() {
    skip_ws();
    const std::size_t root = parse_subtree();
    skip_ws();
    if (peek() != ';') fail("expected ';'");
    ++pos_;
    skip_ws();
    if (pos_ != s_.size()) fail("trailing characters after ';'");
    root_ = root;
    return std::move(nodes_);
  }
  std::size_t root() const { return root_; }

 private:
  std::size_t parse_subtree() {
    const std::size_t id = nodes_.size();
    nodes_.emplace_back();
    skip_ws();
    if (peek() == '(') {
      ++pos_;
      std::vector<std::size_t> kids;
      for (;;) {
        kids.push_back(parse_subtree());
        skip_ws();
        if (peek() == ',') {
          ++pos_;
          continue;
        }
        if (peek() == ')') {
          ++pos_;
          break;
        }
        fail("expected ',' or ')'");
      }
      nodes_[id].children = std::move(kids);
    }
    parse_label(id);
    parse_annotations(id);
    skip_ws();
    if (peek() == ':') {
      ++pos_;
      skip_ws();
      nodes_[id].length = parse_number();
      nodes_[id].has_length = true;
    }
    parse_annotations(id);
    return id;
  }

  void parse_label(std::size_t id) {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && std::string_view("(),:;[").find(s_[pos_]) == std::string_view::npos &&
           !std::isspace(static_cast<unsigned char>(s_[pos_])))
      ++pos_;
    nodes_[id].label = std::string(s_.substr(start, pos_ - start));
  }

  void parse_annotations(std::size_t id) {
    skip_ws();
    while (peek() == '[') {
      const std::size_t close = s_.find(']', pos_);
      if (close == std::string_view::npos) fail("unterminated comment block");
      const std::string_view body = s_.substr(pos_ + 1, close - pos_ - 1);
      pos_ = close + 1;
      if (!body.empty() && body.front() == '&') parse_mutation_comment(body, id);
      skip_ws();
    }
  }

  void parse_mutation_comment(std::string_view body, std::size_t id) {
    const std::size_t key = body.find("mutations");
    if (key == std::string_view::npos) return;
    std::size_t p = body.find('=', key);
    if (p == std::string_view::npos) fail("mutations annotation without '='");
    p = body.find_first_not_of(" \t", p + 1);
    if (p == std::string_view::npos || body[p] != '{') fail("mutations annotation must be {...}");
    const std::size_t end = body.find('}', p);
    if (end == std::string_view::npos) fail("unterminated mutations list");
    std::string_view list = body.substr(p + 1, end - p - 1);
    std::size_t q = 0;
    auto skip = [&] {
      while (q < list.size() && (std::isspace(static_cast<unsigned char>(list[q])) || list[q] == ','))
        ++q;
    };
    skip();
    while (q < list.size()) {
      if (list[q] != '(') fail("expected '(' in mutations list");
      const std::size_t close = list.find(')', q);
      if (close == std::string_view::npos) fail("unterminated mutation tuple");
      const std::string_view tuple = list.substr(q + 1, close - q - 1);
      const std::size_t comma = tuple.find(',');
      if (comma == std::string_view::npos) fail("mutation tuple needs (time, affinity)");
      nodes_[id].mutations.push_back(
          {to_double(tuple.substr(0, comma)), to_double(tuple.substr(comma + 1))});
      q = close + 1;
      skip();
    }
  }

  double to_double(std::string_view sv) {
    while (!sv.empty() && std::isspace(static_cast<unsigned char>(sv.front()))) sv.remove_prefix(1);
    while (!sv.empty() && std::isspace(static_cast<unsigned char>(sv.back()))) sv.remove_suffix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), v);
    if (ec != std::errc() || ptr != sv.data() + sv.size())
      fail("cannot parse number '" + std::string(sv) + "'");
    return v;
  }

  double parse_number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) ||
                                std::string_view("+-.eE").find(s_[pos_]) != std::string_view::npos))
      ++pos_;
    return to_double(s_.substr(start, pos_ - start));
  }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError("newick: " + what + " at offset " + std::to_string(pos_));
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t root_ = 0;
  std::vector<NewickNode> nodes_;
};

}  // namespace

Tree from_annotated_newick(std::string_view text, const TypeSpace& space,
                           const NewickImportOptions& opts) {
  NewickParser parser(text);
  const std::vector<NewickNode> nw = parser.parse();
  const std::size_t top = parser.root();

  for (const auto& n : nw)
    if (!n.children.empty() && n.children.size() != 2)
      throw ValidationError("newick: only bifurcating internal nodes are supported");

  // Depth below the top node, then heights with leaves normalized to 0.
  std::vector<double> depth(nw.size(), 0.0);
  std::vector<std::size_t> order{top};
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t c : nw[order[i]].children) {
      if (!nw[c].has_length) throw ValidationError("newick: branch without length");
      depth[c] = depth[order[i]] + nw[c].length;
      order.push_back(c);
    }
  double max_depth = 0.0;
  double min_depth = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < nw.size(); ++i)
    if (nw[i].children.empty()) {
      max_depth = std::max(max_depth, depth[i]);
      min_depth = std::min(min_depth, depth[i]);
    }
  if (max_depth - min_depth > opts.ultrametric_tol * std::max(1.0, max_depth))
    throw ValidationError("newick: leaves are not contemporaneous");
  auto height = [&](std::size_t i) {
    return nw[i].children.empty() ? 0.0 : std::max(0.0, max_depth - depth[i]);
  };

  const double top_height = height(top);
  const double root_age = opts.root_age.value_or(top_height + nw[top].length);
  if (!(root_age > top_height + kMinBranchLength))
    throw ValidationError("newick: root age must exceed the height of the top node");

  Tree tree;
  tree.rho_index = opts.rho_index;
  int next_id = 0;
  tree.nodes.push_back({next_id++, std::nullopt, root_age, Event::root, opts.root_state, std::nullopt});
  if (opts.root_state < 0 || static_cast<std::size_t>(opts.root_state) >= space.size())
    throw ValidationError("newick: root state out of range");

  struct Pending {
    std::size_t nw_index;
    int parent_id;
    double parent_time;
    int state;
    std::optional<double> affinity;
  };
  std::vector<Pending> stack{{top, 0, root_age, opts.root_state, std::nullopt}};
  while (!stack.empty()) {
    Pending cur = stack.back();
    stack.pop_back();
    const NewickNode& n = nw[cur.nw_index];
    const double t_end = height(cur.nw_index);

    std::vector<Mutation> muts = n.mutations;
    std::sort(muts.begin(), muts.end(),
              [](const Mutation& a, const Mutation& b) { return a.time > b.time; });
    for (const auto& m : muts) {
      if (!(m.time < cur.parent_time && m.time > t_end))
        throw ValidationError("newick: mutation time " + std::to_string(m.time) +
                              " outside its branch interval");
      cur.affinity = m.affinity;
      const int bin = static_cast<int>(bin_index(space, m.affinity));
      if (bin == cur.state) continue;
      const int id = next_id++;
      tree.nodes.push_back({id, cur.parent_id, m.time, Event::type_change, bin, m.affinity});
      cur.parent_id = id;
      cur.parent_time = m.time;
      cur.state = bin;
    }

    const int id = next_id++;
    const Event ev = n.children.empty() ? Event::sampled_leaf : Event::birth;
    tree.nodes.push_back({id, cur.parent_id, t_end, ev, cur.state, cur.affinity});
    for (auto it = n.children.rbegin(); it != n.children.rend(); ++it)
      stack.push_back({*it, id, t_end, cur.state, cur.affinity});
  }
  require_valid(tree, TreeKind::observed, space.size());
  return tree;
}

}  // namespace mtbd
