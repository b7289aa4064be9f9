#include <algorithm>
#include <cmath>
#include <iostream>
#include <thread>

#include "hiercurric/csv.hpp"
#include "hiercurric/dataprep.hpp"
#include "hiercurric/error.hpp"
#include "hiercurric/kernels.hpp"

namespace hiercurric::dataprep {

namespace {

struct Centered {
  std::vector<double> values;
  double sumsq = 0.0;
};

// nullopt for zero variance. The relative floor absorbs rounding noise left
// after subtracting the mean of a constant image.
std::optional<Centered> center(std::span<const double> x) {
  if (x.empty()) return std::nullopt;
  const auto& k = kernels::active();
  const double mean = k.sum(x.data(), x.size()) / static_cast<double>(x.size());
  Centered c;
  c.values.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) c.values[i] = x[i] - mean;
  c.sumsq = k.dot(c.values.data(), c.values.data(), c.values.size());
  const double floor = 1e-24 * static_cast<double>(x.size()) * std::max(1.0, mean * mean);
  if (!(c.sumsq > floor)) return std::nullopt;
  return c;
}

// dot(a,a) / sqrt(sumsq(a)^2) is exactly 1 because sumsq uses the same kernel call.
double correlate(const Centered& a, const Centered& b) {
  const double num = kernels::active().dot(a.values.data(), b.values.data(), a.values.size());
  const double r = num / std::sqrt(a.sumsq * b.sumsq);
  return std::clamp(r, -1.0, 1.0);
}

}  // namespace

std::vector<double> comparison_view(const ImageTensor& image, std::size_t size) {
  image.validate();
  const std::size_t plane = image.height * image.width;
  std::vector<double> gray(plane, 0.0);
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) gray[i] += image.values[c * plane + i];
  for (double& g : gray) g /= static_cast<double>(image.channels);

  if (image.height == size && image.width == size) return gray;

  std::vector<double> out(size * size);
  const double sy = static_cast<double>(image.height) / static_cast<double>(size);
  const double sx = static_cast<double>(image.width) / static_cast<double>(size);
  auto sample = [&](std::size_t y, std::size_t x) { return gray[y * image.width + x]; };
  for (std::size_t oy = 0; oy < size; ++oy) {
    const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < size; ++ox) {
      const double fx =
          std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = (1.0 - wx) * sample(y0, x0) + wx * sample(y0, x1);
      const double bottom = (1.0 - wx) * sample(y1, x0) + wx * sample(y1, x1);
      out[oy * size + ox] = (1.0 - wy) * top + wy * bottom;
    }
  }
  return out;
}

std::optional<double> normalized_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("normalized_correlation: length mismatch");
  const auto ca = center(a);
  const auto cb = center(b);
  if (!ca || !cb) return std::nullopt;
  return correlate(*ca, *cb);
}

std::optional<double> image_correlation(const ImageTensor& a, const ImageTensor& b) {
  return normalized_correlation(comparison_view(a), comparison_view(b));
}

OverlapReport find_overlaps(const DatasetManifest& set_a, const ImageBank& images_a, const DatasetManifest& set_b,
                            const ImageBank& images_b, double threshold, std::size_t jobs) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ValidationError("overlap threshold must be in (0, 1]");
  jobs = std::max<std::size_t>(1, jobs);

  OverlapReport report;
  auto prepare = [&report](const DatasetManifest& m, const ImageBank& bank) {
    std::vector<std::optional<Centered>> out;
    out.reserve(m.size());
    for (const auto& s : m.samples) {
      out.push_back(center(comparison_view(bank.at(s.sample_id))));
      if (!out.back()) report.skipped.push_back(s.sample_id);
    }
    return out;
  };
  const auto va = prepare(set_a, images_a);
  const auto vb = prepare(set_b, images_b);
  std::sort(report.skipped.begin(), report.skipped.end());
  report.skipped.erase(std::unique(report.skipped.begin(), report.skipped.end()), report.skipped.end());
  for (const auto& id : report.skipped) std::cerr << "warning: zero-variance image skipped: " << id << '\n';

  std::vector<std::vector<Overlap>> found(jobs);
  auto scan = [&](std::size_t worker) {
    for (std::size_t i = worker; i < set_a.size(); i += jobs) {
      if (!va[i]) continue;
      for (std::size_t j = 0; j < set_b.size(); ++j) {
        if (!vb[j] || set_a.samples[i].sample_id == set_b.samples[j].sample_id) continue;
        const double score = correlate(*va[i], *vb[j]);
        if (score >= threshold) found[worker].push_back({set_a.samples[i].sample_id, set_b.samples[j].sample_id, score});
      }
    }
  };
  if (jobs == 1) {
    scan(0);
  } else {
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) workers.emplace_back(scan, w);
    for (auto& t : workers) t.join();
  }

  for (auto& part : found) report.pairs.insert(report.pairs.end(), part.begin(), part.end());
  std::sort(report.pairs.begin(), report.pairs.end(), [](const Overlap& x, const Overlap& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.id_a != y.id_a) return x.id_a < y.id_a;
    return x.id_b < y.id_b;
  });

  std::set<std::string> matched;
  for (const auto& p : report.pairs) matched.insert(p.id_a);
  report.filtered_a.split = set_a.split;
  for (const auto& s : set_a.samples)
    if (!matched.count(s.sample_id)) report.filtered_a.samples.push_back(s);
  return report;
}

void write_overlaps_csv(const std::filesystem::path& path, const std::vector<Overlap>& pairs) {
  std::vector<csv::Row> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) rows.push_back({p.id_a, p.id_b, csv::fixed(p.score, 6)});
  csv::write_file(path, {"id_a", "id_b", "score"}, rows);
}

}  // namespace hiercurric::dataprep
