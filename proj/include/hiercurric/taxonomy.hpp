#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hiercurric::taxonomy {

using NodeId = std::string;

/// Category DAG read from an edge list. Immutable once built.
///
/// Nodes are numbered in order of first appearance. Parent lists keep the
/// file edge order, which is what breaks ties during descendant allocation.
class SynsetGraph {
 public:
  SynsetGraph() = default;

  /// Builds from ordered (parent, child) pairs. Throws ValidationError on a
  /// duplicate edge or a cycle.
  static SynsetGraph from_edges(const std::vector<std::pair<NodeId, NodeId>>& edges);

  std::size_t node_count() const noexcept { return ids_.size(); }
  const std::vector<NodeId>& node_ids() const noexcept { return ids_; }
  const NodeId& id(std::size_t node) const { return ids_.at(node); }
  /// Display names default to the node id; the edge-list format carries no names.
  const std::string& display_name(std::size_t node) const { return ids_.at(node); }
  std::optional<std::size_t> find(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id).has_value(); }

  const std::vector<std::pair<std::size_t, std::size_t>>& edges() const noexcept { return edges_; }
  const std::vector<std::size_t>& parents(std::size_t node) const { return parents_.at(node); }
  const std::vector<std::size_t>& children(std::size_t node) const { return children_.at(node); }

  bool is_leaf(std::size_t node) const { return children_.at(node).empty(); }
  bool is_root(std::size_t node) const { return parents_.at(node).empty(); }
  /// Leaf ids in sorted order.
  std::vector<NodeId> leaf_ids() const;

  const std::set<NodeId>& basic_marks() const noexcept { return basic_marks_; }
  bool is_basic(std::size_t node) const { return basic_marks_.count(ids_.at(node)) != 0; }

  /// Copy with `marks` attached, without validation. Use validate_basic_marks().
  SynsetGraph with_marks(std::set<NodeId> marks) const;

  /// True when `ancestor` is reachable from `node` by following parent edges
  /// (a node is not its own strict ancestor).
  bool is_strict_ancestor(std::size_t ancestor, std::size_t node) const;

 private:
  std::vector<NodeId> ids_;
  std::unordered_map<NodeId, std::size_t> index_;
  std::vector<std::pair<std::size_t, std::size_t>> edges_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::vector<std::size_t>> children_;
  std::set<NodeId> basic_marks_;
};

struct LabelEntry {
  std::size_t sub_index = 0;
  std::size_t basic_index = 0;

  friend bool operator==(const LabelEntry&, const LabelEntry&) = default;
};

/// Leaf -> (subordinate index, basic index).
struct LabelMap {
  std::map<NodeId, LabelEntry> entries;
  std::vector<NodeId> basic_names;  // sorted; basic_names[basic_index]
  std::vector<NodeId> sub_names;    // sorted; sub_names[sub_index]

  std::size_t n_basic() const noexcept { return basic_names.size(); }
  std::size_t n_sub() const noexcept { return sub_names.size(); }
  const LabelEntry& at(std::string_view leaf) const;
  bool contains(std::string_view leaf) const { return entries.count(std::string(leaf)) != 0; }
  /// basic index of every subordinate class, indexed by sub_index.
  std::vector<std::size_t> sub_to_basic() const;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Parses `parent>child` lines; blank lines and `#` comments are skipped.
SynsetGraph parse_synset_text(std::string_view text);
SynsetGraph parse_synset_file(const std::filesystem::path& path);

/// One node id per line; blank lines and `#` comments are skipped.
std::set<NodeId> parse_marks_text(std::string_view text);
std::set<NodeId> parse_marks_file(const std::filesystem::path& path);

/// Checks marks against the graph and attaches them. Errors, in order:
/// empty set, unknown ids, one mark strictly above another, leaves with no
/// marked ancestor-or-self (all of them listed).
SynsetGraph validate_basic_marks(const SynsetGraph& graph, const std::set<NodeId>& marks);

/// Marked node reached first by an upward breadth-first search from `leaf`,
/// expanding parents in file edge order; the leaf itself is checked first.
std::optional<std::size_t> first_marked_ancestor(const SynsetGraph& graph, std::size_t leaf);

/// Assigns every leaf to its first marked ancestor-or-self. Marks that
/// receive no leaf are dropped from basic_names so indices stay gap-free.
/// Requires a graph returned by validate_basic_marks().
LabelMap allocate_descendants(const SynsetGraph& graph);

/// Like allocate_descendants, but leaves without a marked ancestor are left
/// out instead of being an error. Used for pretraining on category sets that
/// do not cover the hierarchy.
LabelMap allocate_covered_descendants(const SynsetGraph& graph);

enum class HeightMode { longest, shortest };

/// Basic-marked node -> height (downward path length to a leaf, 0 for leaves).
std::map<NodeId, std::size_t> category_heights(const SynsetGraph& graph, HeightMode mode = HeightMode::longest);

/// height -> number of basic-marked nodes at that height.
std::map<std::size_t, std::size_t> category_height_histogram(const SynsetGraph& graph,
                                                             HeightMode mode = HeightMode::longest);

/// CSV `leaf_id,sub_index,basic_index,basic_id`, rows sorted by leaf_id.
void write_labelmap_csv(const std::filesystem::path& path, const LabelMap& map);
LabelMap read_labelmap_csv(const std::filesystem::path& path);

}  // namespace hiercurric::taxonomy
