#include <algorithm>
#include <cstdio>
#include <fstream>

#include "hiercurric/dataprep.hpp"
#include "hiercurric/error.hpp"
#include "hiercurric/rng.hpp"

namespace hiercurric::dataprep {

namespace {

std::string numbered(char tag, std::size_t value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", tag, width, value);
  return buf;
}

double clip_to_float(double v) { return static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0))); }

ImageTensor perturbed(const ImageTensor& base, double scale, Rng& rng) {
  ImageTensor out = base;
  // The stream is consumed even at zero scale so counts of draws never depend on the scales.
  for (double& v : out.values) v = clip_to_float(v + scale * rng.normal());
  return out;
}

}  // namespace

void SynthSpec::validate() const {
  if (n_basic == 0 || subs_per_basic == 0 || samples_per_sub == 0) throw ValidationError("synth counts must be positive");
  if (channels == 0 || height == 0 || width == 0) throw ValidationError("synth image size must be positive");
  if (!(prototype_scale > 0.0)) throw ValidationError("prototype_scale must be > 0");
  if (!(subordinate_scale > 0.0) && subordinate_scale != 0.0) throw ValidationError("subordinate_scale must be >= 0");
  if (!(subordinate_scale < prototype_scale)) throw ValidationError("subordinate_scale must be < prototype_scale");
  if (!(noise_scale >= 0.0)) throw ValidationError("noise_scale must be >= 0");
  if (n_basic > 999 || subs_per_basic > 999 || samples_per_sub > 9999)
    throw ValidationError("synth counts exceed the id numbering width");
}

SynthDataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SynthDataset data;

  ImageTensor gray{spec.channels, spec.height, spec.width,
                   std::vector<double>(spec.channels * spec.height * spec.width, 0.5)};
  for (std::size_t b = 0; b < spec.n_basic; ++b) data.basic_prototypes.push_back(perturbed(gray, spec.prototype_scale, rng));
  for (std::size_t b = 0; b < spec.n_basic; ++b)
    for (std::size_t s = 0; s < spec.subs_per_basic; ++s)
      data.sub_prototypes.push_back(perturbed(data.basic_prototypes[b], spec.subordinate_scale, rng));

  std::vector<std::pair<std::string, std::string>> edges;
  for (std::size_t b = 0; b < spec.n_basic; ++b) {
    const std::string basic = numbered('B', b, 3);
    edges.emplace_back("root", basic);
    data.marks.insert(basic);
    for (std::size_t s = 0; s < spec.subs_per_basic; ++s) {
      const std::string leaf = basic + numbered('S', s, 3);
      edges.emplace_back(basic, leaf);
      const ImageTensor& proto = data.sub_prototypes[b * spec.subs_per_basic + s];
      for (std::size_t n = 0; n < spec.samples_per_sub; ++n) {
        const std::string id = leaf + numbered('N', n, 4);
        data.manifest.samples.push_back({id, "synth:" + id, leaf});
        data.images.add(id, perturbed(proto, spec.noise_scale, rng));
      }
    }
  }
  data.graph = taxonomy::validate_basic_marks(taxonomy::SynsetGraph::from_edges(edges), data.marks);
  return data;
}

void write_synthetic(const std::filesystem::path& dir, const SynthDataset& data) {
  std::filesystem::create_directories(dir / "images");
  DatasetManifest persisted = data.manifest;
  for (auto& s : persisted.samples) {
    s.source = "images/" + s.sample_id + ".f32";
    save_image(dir / s.source, data.images.at(s.sample_id));
  }
  write_manifest_csv(dir / "manifest.csv", persisted);

  std::ofstream synsets(dir / "synsets.txt", std::ios::binary | std::ios::trunc);
  if (!synsets) throw IoError("cannot write " + (dir / "synsets.txt").string());
  synsets << "# synthetic hierarchy: root > basic > subordinate\n";
  for (const auto& [parent, child] : data.graph.edges())
    synsets << data.graph.id(parent) << '>' << data.graph.id(child) << '\n';

  std::ofstream marks(dir / "marks.txt", std::ios::binary | std::ios::trunc);
  if (!marks) throw IoError("cannot write " + (dir / "marks.txt").string());
  for (const auto& m : data.marks) marks << m << '\n';
}

}  // namespace hiercurric::dataprep
