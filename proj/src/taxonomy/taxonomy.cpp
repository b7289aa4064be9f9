#include "hiercurric/taxonomy.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <sstream>

#include "hiercurric/csv.hpp"
#include "hiercurric/error.hpp"

namespace hiercurric::taxonomy {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

template <typename Fn>
void for_each_content_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    ++line_no;
    const auto line = trim(raw);
    if (!line.empty() && line.front() != '#') fn(line_no, line);
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
}

std::string join(const std::vector<std::string>& items, std::string_view sep = ", ") {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

// Node on some cycle, or nullopt when the graph is acyclic.
std::optional<std::size_t> find_cycle_node(const std::vector<std::vector<std::size_t>>& children) {
  enum class Color : unsigned char { white, grey, black };
  std::vector<Color> color(children.size(), Color::white);
  for (std::size_t start = 0; start < children.size(); ++start) {
    if (color[start] != Color::white) continue;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{start, 0}};
    color[start] = Color::grey;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < children[node].size()) {
        const std::size_t child = children[node][next++];
        if (color[child] == Color::grey) return child;
        if (color[child] == Color::white) {
          color[child] = Color::grey;
          stack.emplace_back(child, 0);
        }
      } else {
        color[node] = Color::black;
        stack.pop_back();
      }
    }
  }
  return std::nullopt;
}

LabelMap allocate(const SynsetGraph& graph, bool require_coverage) {
  LabelMap map;
  std::map<NodeId, NodeId> assigned;  // leaf -> basic id
  std::vector<NodeId> uncovered;
  for (std::size_t node = 0; node < graph.node_count(); ++node) {
    if (!graph.is_leaf(node)) continue;
    if (auto basic = first_marked_ancestor(graph, node)) {
      assigned.emplace(graph.id(node), graph.id(*basic));
    } else {
      uncovered.push_back(graph.id(node));
    }
  }
  if (require_coverage && !uncovered.empty()) {
    std::sort(uncovered.begin(), uncovered.end());
    throw ValidationError("leaves without a basic-level ancestor: " + join(uncovered));
  }

  std::set<NodeId> used;
  for (const auto& [leaf, basic] : assigned) used.insert(basic);
  map.basic_names.assign(used.begin(), used.end());
  std::map<NodeId, std::size_t> basic_index;
  for (std::size_t i = 0; i < map.basic_names.size(); ++i) basic_index[map.basic_names[i]] = i;

  std::size_t sub = 0;
  for (const auto& [leaf, basic] : assigned) {
    map.sub_names.push_back(leaf);
    map.entries.emplace(leaf, LabelEntry{sub++, basic_index.at(basic)});
  }
  return map;
}

}  // namespace

SynsetGraph SynsetGraph::from_edges(const std::vector<std::pair<NodeId, NodeId>>& edges) {
  SynsetGraph g;
  auto intern = [&g](const NodeId& id) {
    auto [it, inserted] = g.index_.emplace(id, g.ids_.size());
    if (inserted) {
      g.ids_.push_back(id);
      g.parents_.emplace_back();
      g.children_.emplace_back();
    }
    return it->second;
  };
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& [parent, child] : edges) {
    const std::size_t p = intern(parent);
    const std::size_t c = intern(child);
    if (!seen.emplace(p, c).second) throw ValidationError("duplicate edge " + parent + ">" + child);
    g.edges_.emplace_back(p, c);
    g.parents_[c].push_back(p);
    g.children_[p].push_back(c);
  }
  if (auto node = find_cycle_node(g.children_)) throw ValidationError("cycle through node " + g.ids_[*node]);
  return g;
}

std::optional<std::size_t> SynsetGraph::find(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<NodeId> SynsetGraph::leaf_ids() const {
  std::vector<NodeId> leaves;
  for (std::size_t i = 0; i < ids_.size(); ++i)
    if (children_[i].empty()) leaves.push_back(ids_[i]);
  std::sort(leaves.begin(), leaves.end());
  return leaves;
}

SynsetGraph SynsetGraph::with_marks(std::set<NodeId> marks) const {
  SynsetGraph g = *this;
  g.basic_marks_ = std::move(marks);
  return g;
}

bool SynsetGraph::is_strict_ancestor(std::size_t ancestor, std::size_t node) const {
  std::vector<bool> visited(ids_.size(), false);
  std::vector<std::size_t> stack(parents_.at(node).begin(), parents_.at(node).end());
  while (!stack.empty()) {
    const std::size_t cur = stack.back();
    stack.pop_back();
    if (cur == ancestor) return true;
    if (visited[cur]) continue;
    visited[cur] = true;
    stack.insert(stack.end(), parents_[cur].begin(), parents_[cur].end());
  }
  return false;
}

const LabelEntry& LabelMap::at(std::string_view leaf) const {
  const auto it = entries.find(std::string(leaf));
  if (it == entries.end()) throw ValidationError("leaf not in label map: " + std::string(leaf));
  return it->second;
}

std::vector<std::size_t> LabelMap::sub_to_basic() const {
  std::vector<std::size_t> out(sub_names.size());
  for (const auto& [leaf, entry] : entries) out.at(entry.sub_index) = entry.basic_index;
  return out;
}

SynsetGraph parse_synset_text(std::string_view text) {
  std::vector<std::pair<NodeId, NodeId>> edges;
  for_each_content_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto sep = line.find('>');
    if (sep == std::string_view::npos) throw ParseError(line_no, "expected parent>child");
    if (line.find('>', sep + 1) != std::string_view::npos) throw ParseError(line_no, "more than one '>'");
    const auto parent = trim(line.substr(0, sep));
    const auto child = trim(line.substr(sep + 1));
    if (parent.empty() || child.empty()) throw ParseError(line_no, "empty node id");
    edges.emplace_back(NodeId(parent), NodeId(child));
  });
  if (edges.empty()) throw ValidationError("synset file contains no edges");
  return SynsetGraph::from_edges(edges);
}

SynsetGraph parse_synset_file(const std::filesystem::path& path) {
  try {
    return parse_synset_text(read_text(path));
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path.string() + ": " + e.what());
  }
}

std::set<NodeId> parse_marks_text(std::string_view text) {
  std::set<NodeId> marks;
  for_each_content_line(text, [&](std::size_t, std::string_view line) { marks.emplace(line); });
  return marks;
}

std::set<NodeId> parse_marks_file(const std::filesystem::path& path) { return parse_marks_text(read_text(path)); }

SynsetGraph validate_basic_marks(const SynsetGraph& graph, const std::set<NodeId>& marks) {
  if (marks.empty()) throw ValidationError("basic-level mark set is empty");

  std::vector<NodeId> unknown;
  for (const auto& m : marks)
    if (!graph.contains(m)) unknown.push_back(m);
  if (!unknown.empty()) throw ValidationError("unknown basic-level node ids: " + join(unknown));

  for (const auto& m : marks) {
    const std::size_t node = *graph.find(m);
    for (const auto& other : marks) {
      if (other == m) continue;
      if (graph.is_strict_ancestor(*graph.find(other), node))
        throw ValidationError("nested basic-level marks: " + other + " is an ancestor of " + m);
    }
  }

  SynsetGraph marked = graph.with_marks(marks);
  std::vector<NodeId> uncovered;
  for (std::size_t node = 0; node < marked.node_count(); ++node)
    if (marked.is_leaf(node) && !first_marked_ancestor(marked, node)) uncovered.push_back(marked.id(node));
  if (!uncovered.empty()) {
    std::sort(uncovered.begin(), uncovered.end());
    throw ValidationError("leaves without a basic-level ancestor: " + join(uncovered));
  }
  return marked;
}

std::optional<std::size_t> first_marked_ancestor(const SynsetGraph& graph, std::size_t leaf) {
  std::vector<bool> queued(graph.node_count(), false);
  std::deque<std::size_t> queue{leaf};
  queued[leaf] = true;
  while (!queue.empty()) {
    const std::size_t node = queue.front();
    queue.pop_front();
    if (graph.is_basic(node)) return node;
    for (std::size_t parent : graph.parents(node)) {
      if (!queued[parent]) {
        queued[parent] = true;
        queue.push_back(parent);
      }
    }
  }
  return std::nullopt;
}

LabelMap allocate_descendants(const SynsetGraph& graph) {
  if (graph.basic_marks().empty()) throw ValidationError("graph has no basic-level marks");
  return allocate(graph, true);
}

LabelMap allocate_covered_descendants(const SynsetGraph& graph) { return allocate(graph, false); }

std::map<NodeId, std::size_t> category_heights(const SynsetGraph& graph, HeightMode mode) {
  // Children precede parents in a reverse topological order; memoize by DFS post-order.
  constexpr std::size_t unset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> height(graph.node_count(), unset);
  for (std::size_t start = 0; start < graph.node_count(); ++start) {
    if (height[start] != unset) continue;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{start, 0}};
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      const auto& kids = graph.children(node);
      if (next < kids.size()) {
        const std::size_t child = kids[next++];
        if (height[child] == unset) stack.emplace_back(child, 0);
        continue;
      }
      if (kids.empty()) {
        height[node] = 0;
      } else {
        std::size_t best = mode == HeightMode::longest ? 0 : unset;
        for (std::size_t child : kids) {
          best = mode == HeightMode::longest ? std::max(best, height[child] + 1)
                                             : std::min(best, height[child] + 1);
        }
        height[node] = best;
      }
      stack.pop_back();
    }
  }
  std::map<NodeId, std::size_t> out;
  for (const auto& m : graph.basic_marks()) out[m] = height.at(*graph.find(m));
  return out;
}

std::map<std::size_t, std::size_t> category_height_histogram(const SynsetGraph& graph, HeightMode mode) {
  std::map<std::size_t, std::size_t> histogram;
  for (const auto& [id, h] : category_heights(graph, mode)) ++histogram[h];
  return histogram;
}

void write_labelmap_csv(const std::filesystem::path& path, const LabelMap& map) {
  std::vector<csv::Row> rows;
  rows.reserve(map.entries.size());
  for (const auto& [leaf, entry] : map.entries) {
    rows.push_back({leaf, std::to_string(entry.sub_index), std::to_string(entry.basic_index),
                    map.basic_names.at(entry.basic_index)});
  }
  csv::write_file(path, {"leaf_id", "sub_index", "basic_index", "basic_id"}, rows);
}

LabelMap read_labelmap_csv(const std::filesystem::path& path) {
  const auto rows = csv::read_file(path);
  if (rows.empty() || rows[0] != csv::Row{"leaf_id", "sub_index", "basic_index", "basic_id"})
    throw ParseError(1, path.string() + ": expected header leaf_id,sub_index,basic_index,basic_id");
  LabelMap map;
  std::map<std::size_t, NodeId> basics;
  std::map<std::size_t, NodeId> subs;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 4) throw ParseError(r + 1, "expected 4 columns");
    LabelEntry entry;
    try {
      entry.sub_index = std::stoull(row[1]);
      entry.basic_index = std::stoull(row[2]);
    } catch (const std::exception&) {
      throw ParseError(r + 1, "non-integer index");
    }
    if (!map.entries.emplace(row[0], entry).second) throw ParseError(r + 1, "duplicate leaf " + row[0]);
    if (!subs.emplace(entry.sub_index, row[0]).second) throw ParseError(r + 1, "duplicate sub_index");
    auto [it, inserted] = basics.emplace(entry.basic_index, row[3]);
    if (!inserted && it->second != row[3]) throw ParseError(r + 1, "basic_index maps to two basic ids");
  }
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!subs.count(i)) throw ValidationError(path.string() + ": sub_index values have a gap at " + std::to_string(i));
    map.sub_names.push_back(subs[i]);
  }
  for (std::size_t i = 0; i < basics.size(); ++i) {
    if (!basics.count(i))
      throw ValidationError(path.string() + ": basic_index values have a gap at " + std::to_string(i));
    map.basic_names.push_back(basics[i]);
  }
  return map;
}

}  // namespace hiercurric::taxonomy
