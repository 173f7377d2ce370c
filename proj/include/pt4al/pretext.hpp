#pragma once

// Rotation-prediction pretext task. The per-sample score is the cross-entropy
// averaged over the four orientations of the image, each labeled with its
// own rotation index.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pt4al/data.hpp"
#include "pt4al/error.hpp"
#include "pt4al/learner.hpp"

namespace pt4al {

inline constexpr std::size_t kOrientations = 4;

struct LossRecord {
  SampleId id = 0;
  double loss = 0.0;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

struct PretextReport {
  std::size_t best_epoch = 0;
  double accuracy = 0.0;  // rotation accuracy of the retained checkpoint on X_U
  std::vector<LossRecord> records;
};

/// All four orientations of every sample, stored consecutively per sample
/// with the orientation index as label.
inline LabeledSet rotation_set(const Pool& pool) {
  LabeledSet set;
  for (const auto& s : pool.samples) {
    for (std::size_t y = 0; y < kOrientations; ++y) set.add(rotate(s.image, static_cast<int>(y)).pixels, y);
  }
  return set;
}

inline double pretext_loss(const LearnerState& state, const Image& image) {
  double total = 0.0;
  for (std::size_t y = 0; y < kOrientations; ++y) {
    total += per_sample_loss(state, rotate(image, static_cast<int>(y)).pixels, y);
  }
  return total / static_cast<double>(kOrientations);
}

/// One averaged rotation loss per sample, in pool order.
inline std::vector<LossRecord> extract_losses(const LearnerState& state, const Pool& pool) {
  require(state.config.classes == kOrientations, "pretext model must have 4 output classes");
  std::vector<LossRecord> records;
  records.reserve(pool.size());
  for (const auto& s : pool.samples) {
    require(s.image.height == s.image.width, "pretext losses need square images");
    records.push_back({s.id, pretext_loss(state, s.image)});
  }
  return records;
}

/// Trains a 4-way rotation classifier on every orientation of the unlabeled
/// pool. Rotation accuracy on the same pool is measured after each epoch and
/// the most accurate checkpoint (earliest on ties) is kept and used for the
/// loss records.
inline std::pair<LearnerState, PretextReport> train_pretext(const Pool& unlabeled, LearnerConfig config) {
  require(!unlabeled.empty(), "pretext training needs a non-empty pool");
  config.input = input_shape(unlabeled);
  require(config.input.height == config.input.width, "pretext training needs square images");
  config.classes = kOrientations;

  const LabeledSet rotations = rotation_set(unlabeled);
  LearnerState best = init_learner(config);
  PretextReport report;
  report.accuracy = -1.0;
  TrainHooks hooks;
  hooks.group_size = kOrientations;
  hooks.on_epoch_end = [&](std::size_t epoch, const LearnerState& state) {
    const double acc = accuracy(state, rotations);
    if (acc > report.accuracy) {
      report.accuracy = acc;
      report.best_epoch = epoch + 1;
      best = state;
    }
  };
  train(best, rotations, config, hooks);
  report.records = extract_losses(best, unlabeled);
  return {std::move(best), std::move(report)};
}

/// CSV `sample_id,pretext_loss`, losses with 12 significant digits.
inline void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& records) {
  out << "sample_id,pretext_loss\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.12g", r.loss);
    out << r.id << ',' << buf << '\n';
  }
}

inline std::vector<LossRecord> read_loss_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "sample_id,pretext_loss") {
    throw FormatError("loss CSV must start with header sample_id,pretext_loss");
  }
  std::vector<LossRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("missing comma");
      std::size_t used = 0;
      const std::string id_text = line.substr(0, comma), loss_text = line.substr(comma + 1);
      const auto id = std::stoull(id_text, &used);
      if (used != id_text.size()) throw std::invalid_argument("id");
      const double loss = std::stod(loss_text, &used);
      if (used != loss_text.size() || !std::isfinite(loss) || loss < 0.0) throw std::invalid_argument("loss");
      records.push_back({id, loss});
    } catch (const std::exception&) {
      throw FormatError("loss CSV line " + std::to_string(line_no) + " is malformed: " + line);
    }
  }
  return records;
}

inline std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open loss file " + path.string());
  return read_loss_csv(in);
}

}  // namespace pt4al
