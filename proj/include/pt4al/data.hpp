#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "pt4al/error.hpp"
#include "pt4al/learner.hpp"
#include "pt4al/rng.hpp"

namespace pt4al {

using SampleId = std::uint64_t;

/// Pixels stored row-major with channels interleaved (HWC), values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  double& at(std::size_t row, std::size_t col, std::size_t ch = 0) {
    return pixels[(row * width + col) * channels + ch];
  }
  double at(std::size_t row, std::size_t col, std::size_t ch = 0) const {
    return pixels[(row * width + col) * channels + ch];
  }

  bool valid() const {
    return pixels.size() == height * width * channels &&
           std::all_of(pixels.begin(), pixels.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
  }

  friend bool operator==(const Image&, const Image&) = default;
};

struct Sample {
  SampleId id = 0;
  Image image;
  std::optional<std::size_t> label;

  friend bool operator==(const Sample&, const Sample&) = default;
};

enum class PoolRole { unlabeled, labeled };

struct Pool {
  std::vector<Sample> samples;
  PoolRole role = PoolRole::labeled;
  std::size_t class_count = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  std::vector<SampleId> ids() const {
    std::vector<SampleId> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.id);
    return out;
  }

  void validate() const {
    std::unordered_set<SampleId> seen;
    for (const auto& s : samples) {
      require(seen.insert(s.id).second, "duplicate sample id " + std::to_string(s.id));
      require(s.image.valid(), "sample " + std::to_string(s.id) + " has an invalid image");
      if (role == PoolRole::labeled) require(s.label.has_value(), "labeled pool contains an unlabeled sample");
      if (s.label) require(*s.label < class_count, "sample label exceeds class count");
    }
  }

  friend bool operator==(const Pool&, const Pool&) = default;
};

/// Copy of `pool` with every label hidden.
inline Pool strip_labels(Pool pool) {
  for (auto& s : pool.samples) s.label.reset();
  pool.role = PoolRole::unlabeled;
  return pool;
}

inline std::vector<std::size_t> class_histogram(const Pool& pool) {
  std::vector<std::size_t> hist(pool.class_count, 0);
  for (const auto& s : pool.samples) {
    require(s.label.has_value(), "class histogram needs labels");
    ++hist.at(*s.label);
  }
  return hist;
}

inline LabeledSet to_labeled_set(const Pool& pool) {
  LabeledSet set;
  if (!pool.empty()) set.dim = pool.samples.front().image.pixels.size();
  set.inputs.reserve(set.dim * pool.size());
  for (const auto& s : pool.samples) {
    require(s.label.has_value(), "sample " + std::to_string(s.id) + " has no label");
    set.add(s.image.pixels, *s.label);
  }
  return set;
}

inline InputShape input_shape(const Pool& pool) {
  require(!pool.empty(), "pool is empty");
  const auto& img = pool.samples.front().image;
  return {img.height, img.width, img.channels};
}

// ---------------------------------------------------------------------------
// Rotation

/// Rotates a square image by quarter * 90 degrees counter-clockwise.
inline Image rotate(const Image& image, int quarter) {
  require(image.height == image.width, "rotation needs a square image");
  require(quarter >= 0 && quarter <= 3, "orientation index must be in 0..3");
  const std::size_t n = image.height;
  Image out = image;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      std::size_t sr = r, sc = c;
      switch (quarter) {
        case 1: sr = c; sc = n - 1 - r; break;
        case 2: sr = n - 1 - r; sc = n - 1 - c; break;
        case 3: sr = n - 1 - c; sc = r; break;
        default: break;
      }
      for (std::size_t ch = 0; ch < image.channels; ++ch) out.at(r, c, ch) = image.at(sr, sc, ch);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

inline constexpr std::size_t kMaxSyntheticClasses = 10;

/// Class prototypes on an n x n grid. Each one has a distinct "up"
/// direction so that none of its 90/180/270 degree rotations coincides with
/// itself or with another class's prototype.
inline Image class_template(std::size_t cls, std::size_t n) {
  require(cls < kMaxSyntheticClasses, "synthetic class index out of range");
  Image img{n, n, 1, std::vector<double>(n * n, 0.0)};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double u = (static_cast<double>(c) + 0.5) / static_cast<double>(n);  // left -> right
      const double v = (static_cast<double>(r) + 0.5) / static_cast<double>(n);  // top -> bottom
      double value = 0.0;
      switch (cls) {
        case 0: value = (v < 0.25 || std::abs(u - 0.5) < 0.13) ? 1.0 : 0.0; break;           // T
        case 1: value = (u < 0.25 || v > 0.75) ? 1.0 : 0.0; break;                           // L
        case 2: value = std::abs(v - (0.25 + std::abs(u - 0.5))) < 0.15 ? 1.0 : 0.0; break;  // chevron
        case 3: value = (v < 0.25 || (u < 0.3 && v > 0.7)) ? 1.0 : 0.0; break;               // bar + dot
        case 4: value = 1.0 - v; break;                                                      // top-lit gradient
        case 5: value = (u + v < 0.8) ? 1.0 : 0.0; break;                                    // corner wedge
        case 6: value = (u < 0.25 || v < 0.25 || (std::abs(v - 0.56) < 0.1 && u < 0.7)) ? 1.0 : 0.0; break;  // F
        case 7: value = u < 0.5 ? 1.0 - u : 0.0; break;                                      // left half ramp
        case 8: value = (std::abs(v - 0.5) < 0.13 || (u < 0.3 && v < 0.3)) ? 1.0 : 0.0; break;
        case 9: value = (v < 0.3 && (u < 0.3 || u > 0.7)) ? 1.0 : 0.0; break;                // two top dots
        default: break;
      }
      img.at(r, c) = value;
    }
  }
  return img;
}

struct SyntheticSpec {
  std::size_t per_class = 100;
  std::size_t classes = 4;
  std::size_t size = 8;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

/// Seeded corpus of class prototypes with per-sample nuisance: an occasional
/// one-pixel translation, reduced contrast, a blend toward another class's
/// prototype (mostly slight, at most about a third) and
/// Gaussian pixel noise of standard deviation `noise`. The nuisance strength
/// saturates at noise >= 0.1 and vanishes at noise 0, where every image of a
/// class equals its prototype. Ids run 0..N-1 in class-major order.
inline Pool gen_synthetic(const SyntheticSpec& spec) {
  require(spec.classes >= 2 && spec.classes <= kMaxSyntheticClasses, "synthetic classes must be in 2..10");
  require(spec.per_class >= 1, "synthetic per-class count must be positive");
  require(spec.size >= 4, "synthetic image size must be at least 4");
  require(spec.noise >= 0.0 && std::isfinite(spec.noise), "noise level must be finite and non-negative");

  constexpr double kShiftProbability = 0.2;
  constexpr double kContrastSpread = 0.3;
  constexpr double kMaxBlend = 0.35;

  auto rng = make_stream(spec.seed, "synthetic");
  const std::size_t n = spec.size;
  const double variation = std::min(1.0, spec.noise * 10.0);
  std::vector<Image> protos;
  for (std::size_t cls = 0; cls < spec.classes; ++cls) protos.push_back(class_template(cls, n));

  Pool pool;
  pool.role = PoolRole::labeled;
  pool.class_count = spec.classes;
  pool.samples.reserve(spec.per_class * spec.classes);
  SampleId next = 0;
  for (std::size_t cls = 0; cls < spec.classes; ++cls) {
    for (std::size_t k = 0; k < spec.per_class; ++k) {
      long dr = 0, dc = 0;
      if (uniform_real(rng) < variation * kShiftProbability) {
        while (dr == 0 && dc == 0) {
          dr = static_cast<long>(uniform_index(rng, 3)) - 1;
          dc = static_cast<long>(uniform_index(rng, 3)) - 1;
        }
      }
      const double contrast = 1.0 - kContrastSpread * variation * uniform_real(rng);
      const std::size_t partner = (cls + 1 + uniform_index(rng, spec.classes - 1)) % spec.classes;
      const double u = uniform_real(rng);
      const double blend = kMaxBlend * variation * u * u * u;

      Image img{n, n, 1, std::vector<double>(n * n, 0.0)};
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
          const long sr = static_cast<long>(r) - dr, sc = static_cast<long>(c) - dc;
          double base = 0.0;
          if (sr >= 0 && sc >= 0 && sr < static_cast<long>(n) && sc < static_cast<long>(n)) {
            const auto pr = static_cast<std::size_t>(sr), pc = static_cast<std::size_t>(sc);
            base = (1.0 - blend) * protos[cls].at(pr, pc) + blend * protos[partner].at(pr, pc);
          }
          double value = 0.5 + contrast * (base - 0.5);
          if (spec.noise > 0.0) value += spec.noise * standard_normal(rng);
          img.at(r, c) = std::clamp(value, 0.0, 1.0);
        }
      }
      pool.samples.push_back({next++, std::move(img), cls});
    }
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Subsets and splits

/// Per-class counts of the linear ramp 500, 1000, ..., 500*C scaled by `scale`.
inline std::vector<std::size_t> ramp_counts(std::size_t classes, double scale) {
  require(scale > 0.0, "ramp scale must be positive");
  std::vector<std::size_t> counts(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    counts[c] = static_cast<std::size_t>(std::llround(500.0 * static_cast<double>(c + 1) * scale));
  }
  return counts;
}

namespace detail {

inline std::vector<std::vector<std::size_t>> members_by_class(const Pool& pool) {
  std::vector<std::vector<std::size_t>> members(pool.class_count);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& label = pool.samples[i].label;
    require(label.has_value(), "operation needs a labeled pool");
    require(*label < pool.class_count, "sample label exceeds class count");
    members[*label].push_back(i);
  }
  return members;
}

inline Pool select_positions(const Pool& pool, std::vector<std::size_t> positions) {
  std::sort(positions.begin(), positions.end());
  Pool out;
  out.role = pool.role;
  out.class_count = pool.class_count;
  out.samples.reserve(positions.size());
  for (auto p : positions) out.samples.push_back(pool.samples[p]);
  return out;
}

}  // namespace detail

/// Seeded subsample holding exactly counts[c] samples of class c; original
/// pool order is preserved.
inline Pool make_imbalanced(const Pool& pool, std::span<const std::size_t> counts, std::uint64_t seed) {
  require(counts.size() == pool.class_count, "imbalance counts must list one entry per class");
  auto members = detail::members_by_class(pool);
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    require(counts[c] <= members[c].size(), "class " + std::to_string(c) + " has only " +
                                                std::to_string(members[c].size()) + " samples, " +
                                                std::to_string(counts[c]) + " requested");
    auto rng = make_stream(seed, "imbalance", c);
    shuffle(std::span<std::size_t>(members[c]), rng);
    keep.insert(keep.end(), members[c].begin(), members[c].begin() + static_cast<long>(counts[c]));
  }
  return detail::select_positions(pool, std::move(keep));
}

struct Split {
  Pool train;
  Pool test;
};

/// Class-stratified split: round(fraction * n_c) samples of each class go to
/// the test side. Both sides keep the original pool order.
inline Split split_train_test(const Pool& pool, double test_fraction, std::uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0, "test fraction must lie strictly between 0 and 1");
  auto members = detail::members_by_class(pool);
  std::vector<std::size_t> train, test;
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto rng = make_stream(seed, "split", c);
    shuffle(std::span<std::size_t>(members[c]), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members[c].size())));
    test.insert(test.end(), members[c].begin(), members[c].begin() + static_cast<long>(n_test));
    train.insert(train.end(), members[c].begin() + static_cast<long>(n_test), members[c].end());
  }
  return {detail::select_positions(pool, std::move(train)), detail::select_positions(pool, std::move(test))};
}

/// CSV manifest `id,label,split`; hidden labels are written empty.
inline void write_pool_manifest(std::ostream& out, const Pool& train, const Pool& test) {
  out << "id,label,split\n";
  auto rows = [&](const Pool& pool, const char* split) {
    for (const auto& s : pool.samples) {
      out << s.id << ',';
      if (s.label) out << *s.label;
      out << ',' << split << '\n';
    }
  };
  rows(train, "train");
  rows(test, "test");
}

}  // namespace pt4al
