#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pfnflow/pfn_flow.hpp"

namespace pfnflow {

// Checkpoint = little-endian binary tensor blob (<prefix>.bin) plus a JSON
// sidecar (<prefix>.json) holding the configs, seed, step count, and format
// version.
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline double get_f64(std::istream& in) {
  return std::bit_cast<double>(get_u64(in));
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const PfnConfig& c) {
  j = nlohmann::json{{"width", c.width},
                     {"layers", c.layers},
                     {"heads", c.heads},
                     {"ff_width", c.ff_width},
                     {"dropout", c.dropout},
                     {"activation", to_string(c.activation)},
                     {"max_classes", c.max_classes},
                     {"max_features", c.max_features},
                     {"self_distill_weight", c.self_distill_weight}};
}

inline void from_json(const nlohmann::json& j, PfnConfig& c) {
  c.width = j.value("width", c.width);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ff_width = j.value("ff_width", c.ff_width);
  c.dropout = j.value("dropout", c.dropout);
  c.activation = activation_from_string(j.value("activation", std::string("gelu")));
  c.max_classes = j.value("max_classes", c.max_classes);
  c.max_features = j.value("max_features", c.max_features);
  c.self_distill_weight = j.value("self_distill_weight", c.self_distill_weight);
}

inline void to_json(nlohmann::json& j, const FlowConfig& c) {
  j = nlohmann::json{
      {"depth", c.depth},
      {"solver", c.solver == FlowConfig::Solver::kEuler ? "euler" : "rk4"},
      {"steps", c.steps},
      {"samples_per_imputation", c.samples_per_imputation}};
}

inline void from_json(const nlohmann::json& j, FlowConfig& c) {
  c.depth = j.value("depth", c.depth);
  const std::string s = j.value("solver", std::string("euler"));
  if (s == "euler") {
    c.solver = FlowConfig::Solver::kEuler;
  } else if (s == "rk4") {
    c.solver = FlowConfig::Solver::kRk4;
  } else {
    throw std::invalid_argument("FlowConfig: unknown solver " + s);
  }
  c.steps = j.value("steps", c.steps);
  c.samples_per_imputation =
      j.value("samples_per_imputation", c.samples_per_imputation);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"warmup_epochs", c.warmup_epochs},
                     {"min_lr", c.min_lr},
                     {"weight_decay", c.weight_decay},
                     {"batch_tasks", c.batch_tasks},
                     {"cfm_weight", c.cfm_weight},
                     {"steps", c.steps},
                     {"steps_per_epoch", c.steps_per_epoch},
                     {"seed", c.seed},
                     {"threads", c.threads},
                     {"train_flow", c.train_flow},
                     {"freeze_backbone_for_flow", c.freeze_backbone_for_flow}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lr = j.value("lr", c.lr);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.min_lr = j.value("min_lr", c.min_lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_tasks = j.value("batch_tasks", c.batch_tasks);
  c.cfm_weight = j.value("cfm_weight", c.cfm_weight);
  c.steps = j.value("steps", c.steps);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  c.train_flow = j.value("train_flow", c.train_flow);
  c.freeze_backbone_for_flow =
      j.value("freeze_backbone_for_flow", c.freeze_backbone_for_flow);
}

template <class S>
void save_checkpoint(const std::string& prefix, const PfnFlowModel<S>& model,
                     std::uint64_t seed, long step,
                     nlohmann::json extra = nlohmann::json::object()) {
  const ParamStore<S>& params = model.pfn.params();
  std::ofstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("save_checkpoint: cannot open " + prefix + ".bin");
  bin.write("PFNB", 4);
  detail::put_u32(bin, kCheckpointVersion);
  detail::put_u32(bin, static_cast<std::uint32_t>(sizeof(S)));
  detail::put_u64(bin, static_cast<std::uint64_t>(params.count()));
  for (int i = 0; i < params.count(); ++i) {
    const std::string& name = params.name(i);
    detail::put_u32(bin, static_cast<std::uint32_t>(name.size()));
    bin.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& m = params.value(i);
    detail::put_u64(bin, static_cast<std::uint64_t>(m.rows()));
    detail::put_u64(bin, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        detail::put_f64(bin, static_cast<double>(m(r, c)));
      }
    }
  }

  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["dtype"] = sizeof(S) == 8 ? "f64" : "f32";
  j["seed"] = seed;
  j["step"] = step;
  j["pfn"] = model.pfn.config();
  j["has_flow"] = model.flow.has_value();
  if (model.flow.has_value()) j["flow"] = model.flow->config();
  j["extra"] = std::move(extra);
  std::ofstream side(prefix + ".json");
  if (!side) throw std::runtime_error("save_checkpoint: cannot open " + prefix + ".json");
  side << j.dump(2) << "\n";
}

struct CheckpointInfo {
  std::uint64_t seed = 0;
  long step = 0;
  std::string dtype;
  nlohmann::json extra;
};

template <class S>
PfnFlowModel<S> load_checkpoint(const std::string& prefix,
                                CheckpointInfo* info = nullptr) {
  std::ifstream side(prefix + ".json");
  if (!side) throw std::runtime_error("load_checkpoint: cannot open " + prefix + ".json");
  nlohmann::json j;
  side >> j;
  if (j.value("format_version", 0u) != kCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: unsupported format version");
  }
  PfnConfig pfn_cfg = j.at("pfn").get<PfnConfig>();
  std::unique_ptr<PfnFlowModel<S>> model;
  if (j.value("has_flow", false)) {
    FlowConfig flow_cfg = j.at("flow").get<FlowConfig>();
    model = std::make_unique<PfnFlowModel<S>>(pfn_cfg, flow_cfg, 0);
  } else {
    model = std::make_unique<PfnFlowModel<S>>(pfn_cfg, 0);
  }

  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("load_checkpoint: cannot open " + prefix + ".bin");
  char magic[4];
  bin.read(magic, 4);
  if (std::string(magic, 4) != "PFNB") {
    throw std::runtime_error("load_checkpoint: bad magic");
  }
  if (detail::get_u32(bin) != kCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: bad blob version");
  }
  detail::get_u32(bin);  // stored scalar width; blob always holds f64 payloads
  const std::uint64_t count = detail::get_u64(bin);
  ParamStore<S>& params = model->pfn.params();
  if (count != static_cast<std::uint64_t>(params.count())) {
    throw std::runtime_error("load_checkpoint: tensor count mismatch");
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::get_u32(bin);
    std::string name(name_len, '\0');
    bin.read(name.data(), name_len);
    const int idx = params.find(name);
    auto& m = params.value(idx);
    const std::uint64_t rows = detail::get_u64(bin);
    const std::uint64_t cols = detail::get_u64(bin);
    if (rows != static_cast<std::uint64_t>(m.rows()) ||
        cols != static_cast<std::uint64_t>(m.cols())) {
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    }
    for (std::uint64_t r = 0; r < rows; ++r) {
      for (std::uint64_t c = 0; c < cols; ++c) {
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            static_cast<S>(detail::get_f64(bin));
      }
    }
  }
  if (!bin) throw std::runtime_error("load_checkpoint: truncated blob");
  if (info) {
    info->seed = j.value("seed", 0ull);
    info->step = j.value("step", 0l);
    info->dtype = j.value("dtype", "f64");
    info->extra = j.value("extra", nlohmann::json::object());
  }
  return std::move(*model);
}

}  // namespace pfnflow
