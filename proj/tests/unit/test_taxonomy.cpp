#include <fstream>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"

#include "hiercurric/error.hpp"
#include "hiercurric/taxonomy.hpp"

using namespace hiercurric;
using namespace hiercurric::taxonomy;

namespace {

const std::filesystem::path kFixtures = std::filesystem::path(HC_FIXTURE_DIR) / "taxonomy";

SynsetGraph example_graph() { return parse_synset_file(kFixtures / "synsets.txt"); }

std::map<std::string, std::string> leaf_to_basic(const SynsetGraph& graph) {
  const auto labels = allocate_descendants(graph);
  std::map<std::string, std::string> out;
  for (const auto& [leaf, e] : labels.entries) out[leaf] = labels.basic_names.at(e.basic_index);
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("edge list parsing") {
  const auto g = parse_synset_text("root>a\nroot>b\na>c\n");
  CHECK(g.node_count() == 4);
  CHECK(g.leaf_ids() == std::vector<NodeId>{"b", "c"});
  CHECK(g.is_root(*g.find("root")));

  CHECK_THROWS_AS(parse_synset_text("a>b\nb>a\n"), ValidationError);
  CHECK_THROWS_AS(parse_synset_text("a>b\na>b\n"), ValidationError);
  CHECK_THROWS_AS(parse_synset_text("a>b\nnoarrow\n"), ParseError);
  CHECK_THROWS_AS(parse_synset_text("# only a comment\n\n"), ValidationError);
  CHECK_THROWS_AS(parse_synset_file(kFixtures / "missing.txt"), IoError);

  const auto ok = parse_synset_text("# header\n\nroot>a\n");
  CHECK(ok.node_count() == 2);
}

TEST_CASE("basic mark validation") {
  const auto g = example_graph();
  CHECK_NOTHROW(validate_basic_marks(g, {"dog", "fish", "car"}));

  try {
    validate_basic_marks(g, {"dog", "car"});
    FAIL("uncovered leaf accepted");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("fish") != std::string::npos);
  }
  CHECK_THROWS_AS(validate_basic_marks(g, {"dog", "animal", "car"}), ValidationError);
  CHECK_THROWS_AS(validate_basic_marks(g, {}), ValidationError);
  CHECK_THROWS_AS(validate_basic_marks(g, {"dog", "fish", "car", "unicorn"}), ValidationError);
}

TEST_CASE("descendant allocation on the example graph") {
  const auto g = validate_basic_marks(example_graph(), parse_marks_file(kFixtures / "marks.txt"));
  const std::map<std::string, std::string> expected{
      {"poodle", "dog"}, {"beagle", "dog"}, {"suv", "car"}, {"fish", "fish"}};
  CHECK(leaf_to_basic(g) == expected);

  const auto labels = allocate_descendants(g);
  CHECK(labels.n_basic() == 3);
  CHECK(labels.n_sub() == 4);
  const auto s2b = labels.sub_to_basic();
  for (const auto& [leaf, e] : labels.entries) CHECK(s2b[e.sub_index] == e.basic_index);
}

TEST_CASE("multi-parent leaf goes to the first listed parent") {
  const auto g = parse_synset_file(kFixtures / "minivan.txt");
  const auto marked = validate_basic_marks(g, {"car", "van"});
  const auto m = leaf_to_basic(marked);
  CHECK(m.at("minivan") == "car");
  CHECK(m.at("sedan") == "car");
  CHECK(m.at("cargo_van") == "van");

  // Reversing the edge order flips the assignment.
  const auto flipped = validate_basic_marks(
      parse_synset_text("root>vehicle\nvehicle>car\nvehicle>van\nvan>minivan\ncar>minivan\ncar>sedan\nvan>cargo_van\n"),
      {"car", "van"});
  CHECK(leaf_to_basic(flipped).at("minivan") == "van");
}

TEST_CASE("root mark covers a chain") {
  const auto g = validate_basic_marks(parse_synset_text("root>a\na>b\n"), {"root"});
  CHECK(leaf_to_basic(g) == std::map<std::string, std::string>{{"b", "root"}});
  CHECK(category_height_histogram(g) == std::map<std::size_t, std::size_t>{{2, 1}});
}

TEST_CASE("covered allocation skips uncovered leaves") {
  const auto g = example_graph().with_marks({"animal"});
  const auto labels = allocate_covered_descendants(g);
  CHECK(labels.n_basic() == 1);
  CHECK(labels.contains("poodle"));
  CHECK(labels.contains("fish"));
  CHECK_FALSE(labels.contains("suv"));
}

TEST_CASE("category heights") {
  const auto g = validate_basic_marks(example_graph(), {"dog", "fish", "car"});
  const auto h = category_heights(g);
  CHECK(h == std::map<NodeId, std::size_t>{{"dog", 1}, {"car", 1}, {"fish", 0}});
  CHECK(category_height_histogram(g) == std::map<std::size_t, std::size_t>{{0, 1}, {1, 2}});

  const auto leaves = validate_basic_marks(example_graph(), {"poodle", "beagle", "fish", "suv"});
  CHECK(category_height_histogram(leaves) == std::map<std::size_t, std::size_t>{{0, 4}});

  // longest and shortest differ when paths to leaves have different lengths
  const auto uneven = validate_basic_marks(parse_synset_text("r>x\nx>y\ny>z\nr>w\n"), {"r"});
  CHECK(category_heights(uneven, HeightMode::longest).at("r") == 3);
  CHECK(category_heights(uneven, HeightMode::shortest).at("r") == 1);
}

TEST_CASE("label map csv matches the golden file and round-trips") {
  const auto g = validate_basic_marks(example_graph(), {"dog", "fish", "car"});
  const auto labels = allocate_descendants(g);
  const auto dir = oracle::temp_dir("taxonomy");
  write_labelmap_csv(dir / "labelmap.csv", labels);
  CHECK(slurp(dir / "labelmap.csv") == slurp(kFixtures / "labelmap.csv"));
  CHECK(read_labelmap_csv(dir / "labelmap.csv") == labels);
  std::filesystem::remove_all(dir);
}
