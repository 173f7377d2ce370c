#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "pt4al/error.hpp"
#include "pt4al/learner.hpp"

namespace pt4al {

inline constexpr const char* kCheckpointMagic = "PT4AL-CKPT";
inline constexpr int kCheckpointVersion = 1;

NLOHMANN_JSON_SERIALIZE_ENUM(Activation, {{Activation::relu, "relu"}, {Activation::tanh, "tanh"}})

inline void to_json(nlohmann::json& j, const LearnerConfig& c) {
  j = nlohmann::json{
      {"input", {{"height", c.input.height}, {"width", c.input.width}, {"channels", c.input.channels}}},
      {"conv", {{"filters", c.conv.filters}, {"kernel", c.conv.kernel}}},
      {"hidden", c.hidden},
      {"classes", c.classes},
      {"activation", c.activation},
      {"learning_rate", c.schedule.initial},
      {"milestones", c.schedule.milestones},
      {"decay", c.schedule.decay},
      {"momentum", c.momentum},
      {"weight_decay", c.weight_decay},
      {"epochs", c.epochs},
      {"minibatch", c.minibatch},
      {"seed", c.seed},
      {"init_scale", c.init_scale},
  };
}

/// Missing keys keep their defaults, so config files may give only overrides.
inline void from_json(const nlohmann::json& j, LearnerConfig& c) {
  require(j.is_object(), "learner config must be a JSON object");
  static const char* const known[] = {"input",    "conv",         "hidden", "classes",   "activation",
                                      "learning_rate", "milestones", "decay", "momentum", "weight_decay",
                                      "epochs",   "minibatch",    "seed",   "init_scale"};
  for (const auto& [key, _] : j.items()) {
    require(std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) !=
                std::end(known),
            "unknown learner config key: " + key);
  }
  if (j.contains("input")) {
    const auto& in = j.at("input");
    c.input.height = in.value("height", c.input.height);
    c.input.width = in.value("width", c.input.width);
    c.input.channels = in.value("channels", c.input.channels);
  }
  if (j.contains("conv")) {
    const auto& cv = j.at("conv");
    c.conv.filters = cv.value("filters", c.conv.filters);
    c.conv.kernel = cv.value("kernel", c.conv.kernel);
  }
  if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.classes = j.value("classes", c.classes);
  if (j.contains("activation")) {
    const auto name = j.at("activation").get<std::string>();
    require(name == "relu" || name == "tanh", "activation must be relu or tanh");
    c.activation = j.at("activation").get<Activation>();
  }
  c.schedule.initial = j.value("learning_rate", c.schedule.initial);
  if (j.contains("milestones")) c.schedule.milestones = j.at("milestones").get<std::vector<double>>();
  c.schedule.decay = j.value("decay", c.schedule.decay);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.epochs = j.value("epochs", c.epochs);
  c.minibatch = j.value("minibatch", c.minibatch);
  c.seed = j.value("seed", c.seed);
  c.init_scale = j.value("init_scale", c.init_scale);
}

inline nlohmann::json checkpoint_json(const LearnerState& state) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : state.params.tensors) tensors.push_back({{"shape", t.shape()}, {"data", t.values()}});
  return {{"magic", kCheckpointMagic},
          {"version", kCheckpointVersion},
          {"config", state.config},
          {"trained_epochs", state.trained_epochs},
          {"tensors", std::move(tensors)}};
}

inline LearnerState state_from_checkpoint(const nlohmann::json& j) {
  try {
    if (!j.is_object() || j.value("magic", std::string{}) != kCheckpointMagic) {
      throw FormatError("not a PT4AL checkpoint (bad magic)");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw FormatError("unsupported checkpoint version " + j.at("version").dump());
    }
    LearnerState state;
    state.config = j.at("config").get<LearnerConfig>();
    state.config.validate();
    state.trained_epochs = j.at("trained_epochs").get<std::size_t>();
    for (const auto& t : j.at("tensors")) {
      state.params.tensors.emplace_back(t.at("shape").get<std::vector<std::size_t>>(),
                                        t.at("data").get<std::vector<double>>());
    }
    // Reject weights that do not fit the declared architecture.
    const auto reference = init_learner(state.config);
    require(reference.params.tensors.size() == state.params.tensors.size(),
            "checkpoint tensor count does not match its config");
    for (std::size_t i = 0; i < reference.params.tensors.size(); ++i) {
      require(reference.params.tensors[i].shape() == state.params.tensors[i].shape(),
              "checkpoint tensor shape does not match its config");
    }
    require(state.params.all_finite(), "checkpoint contains non-finite weights");
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const LearnerState& state) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write checkpoint " + path.string());
  out << checkpoint_json(state).dump() << '\n';
  if (!out) throw RuntimeError("failed writing checkpoint " + path.string());
}

inline LearnerState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  return state_from_checkpoint(j);
}

}  // namespace pt4al
