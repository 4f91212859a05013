#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elchat/archive.hpp"
#include "elchat/error.hpp"
#include "elchat/expansion.hpp"
#include "elchat/layer_pattern.hpp"

namespace elchat {

inline constexpr double kDefaultParallelEps = 1e-7;

// Weights on the adapted (target) model, from the mixing ratios
// 0.3:0.7 (outermost layers), 0.5:0.5 (second layers) and 0.1:0.9 (Qwen3, all layers).
inline constexpr double kOuterLayerAlpha = 0.7;
inline constexpr double kSecondLayerAlpha = 0.5;
inline constexpr double kQwen3Alpha = 0.9;

struct SlerpInfo {
  double omega = 0.0;     // angle between the inputs, radians
  bool fallback = false;  // linear interpolation was used
};

namespace detail {

inline void check_pair(std::span<const float> v0, std::span<const float> v1, double alpha) {
  if (v0.size() != v1.size()) {
    throw ShapeError("interpolation inputs differ in length: " + std::to_string(v0.size()) + " vs " +
                     std::to_string(v1.size()));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha " + std::to_string(alpha) + " is outside [0, 1]");
  for (std::size_t i = 0; i < v0.size(); ++i) {
    if (!std::isfinite(v0[i]) || !std::isfinite(v1[i])) {
      throw NumericError("non-finite value at element " + std::to_string(i));
    }
  }
}

inline std::vector<float> lerp(std::span<const float> v0, std::span<const float> v1, double alpha) {
  std::vector<float> out(v0.size());
  const double w0 = 1.0 - alpha;
  for (std::size_t i = 0; i < v0.size(); ++i) out[i] = static_cast<float>(w0 * v0[i] + alpha * v1[i]);
  return out;
}

}  // namespace detail

/// (1 - alpha) * v0 + alpha * v1
inline std::vector<float> linear(std::span<const float> v0, std::span<const float> v1, double alpha) {
  detail::check_pair(v0, v1, alpha);
  return detail::lerp(v0, v1, alpha);
}

/// Spherical interpolation along the arc between v0 and v1:
///   [sin((1-alpha) W) v0 + sin(alpha W) v1] / sin W,   W = angle(v0, v1)
/// Falls back to linear interpolation when |sin W| or either norm is below
/// `parallel_eps`. alpha = 0 returns v0 and alpha = 1 returns v1 exactly.
inline std::vector<float> slerp(std::span<const float> v0, std::span<const float> v1, double alpha,
                                double parallel_eps = kDefaultParallelEps, SlerpInfo* info = nullptr) {
  detail::check_pair(v0, v1, alpha);
  double dot = 0.0, n0 = 0.0, n1 = 0.0;
  for (std::size_t i = 0; i < v0.size(); ++i) {
    dot += static_cast<double>(v0[i]) * v1[i];
    n0 += static_cast<double>(v0[i]) * v0[i];
    n1 += static_cast<double>(v1[i]) * v1[i];
  }
  n0 = std::sqrt(n0);
  n1 = std::sqrt(n1);
  SlerpInfo local;
  SlerpInfo& meta = info ? *info : local;
  meta = {};
  const bool tiny = n0 < parallel_eps || n1 < parallel_eps;
  if (!tiny) meta.omega = std::acos(std::clamp(dot / (n0 * n1), -1.0, 1.0));
  const double sin_omega = std::sin(meta.omega);
  meta.fallback = tiny || std::abs(sin_omega) < parallel_eps;

  if (alpha == 0.0) return {v0.begin(), v0.end()};
  if (alpha == 1.0) return {v1.begin(), v1.end()};
  if (meta.fallback) return detail::lerp(v0, v1, alpha);

  const double s0 = std::sin((1.0 - alpha) * meta.omega) / sin_omega;
  const double s1 = std::sin(alpha * meta.omega) / sin_omega;
  std::vector<float> out(v0.size());
  for (std::size_t i = 0; i < v0.size(); ++i) out[i] = static_cast<float>(s0 * v0[i] + s1 * v1[i]);
  return out;
}

// ---------------------------------------------------------------------------

enum class MergeMethod { kSlerp, kLinear };

inline const char* method_name(MergeMethod m) { return m == MergeMethod::kSlerp ? "slerp" : "linear"; }

inline MergeMethod parse_method(const std::string& s) {
  if (s == "slerp") return MergeMethod::kSlerp;
  if (s == "linear") return MergeMethod::kLinear;
  throw ValidationError("unknown merge method '" + s + "' (expected slerp or linear)");
}

enum class SchedulePreset { kElchatDefault, kQwen3, kUniform };

inline SchedulePreset parse_preset(const std::string& s) {
  if (s == "elchat-default") return SchedulePreset::kElchatDefault;
  if (s == "qwen3") return SchedulePreset::kQwen3;
  if (s == "uniform") return SchedulePreset::kUniform;
  throw ValidationError("unknown schedule preset '" + s + "' (expected elchat-default, qwen3 or uniform)");
}

/// Per-tensor interpolation weights. alpha is the weight on the target
/// (adapted) model: 0 keeps the source, 1 keeps the target.
struct MergeSchedule {
  double default_alpha = 0.5;
  std::map<std::size_t, double> per_layer;
  double non_layer_alpha = 0.5;
  MergeMethod method = MergeMethod::kSlerp;
  std::vector<std::string> excluded{kDefaultEmbeddingName, kDefaultHeadName};
  std::string layer_pattern = kDefaultLayerPattern;
  double parallel_eps = kDefaultParallelEps;

  void validate() const {
    auto check = [](double a, const std::string& what) {
      if (!(a >= 0.0 && a <= 1.0)) throw ValidationError(what + " " + std::to_string(a) + " is outside [0, 1]");
    };
    check(default_alpha, "default_alpha");
    check(non_layer_alpha, "non_layer_alpha");
    for (const auto& [layer, a] : per_layer) check(a, "alpha for layer " + std::to_string(layer));
    if (!(parallel_eps > 0.0)) throw ValidationError("parallel_eps must be positive");
  }

  bool is_excluded(const std::string& name) const {
    return std::find(excluded.begin(), excluded.end(), name) != excluded.end();
  }

  double alpha_for_layer(std::size_t layer) const {
    auto it = per_layer.find(layer);
    return it == per_layer.end() ? default_alpha : it->second;
  }
};

/// elchat-default: 0.7 at the outermost layers {0, L-1}, 0.5 at {1, L-2},
/// `default_alpha` elsewhere (outermost wins where the sets overlap).
/// qwen3: 0.9 at every layer. uniform: `default_alpha` at every layer.
inline MergeSchedule build_schedule(SchedulePreset preset, std::size_t n_layers, double default_alpha = 0.5) {
  if (n_layers < 1) throw ValidationError("a merge schedule needs at least one layer");
  MergeSchedule s;
  s.default_alpha = default_alpha;
  s.non_layer_alpha = default_alpha;
  switch (preset) {
    case SchedulePreset::kElchatDefault:
      if (n_layers > 1) {
        s.per_layer[1] = kSecondLayerAlpha;
        s.per_layer[n_layers - 2] = kSecondLayerAlpha;
      }
      s.per_layer[0] = kOuterLayerAlpha;
      s.per_layer[n_layers - 1] = kOuterLayerAlpha;
      break;
    case SchedulePreset::kQwen3:
      for (std::size_t l = 0; l < n_layers; ++l) s.per_layer[l] = kQwen3Alpha;
      break;
    case SchedulePreset::kUniform:
      for (std::size_t l = 0; l < n_layers; ++l) s.per_layer[l] = default_alpha;
      break;
  }
  s.validate();
  return s;
}

/// Number of layers implied by the tensor names (max index + 1), or 0.
inline std::size_t count_layers(const TensorArchive& archive, const LayerPattern& pattern) {
  std::size_t n = 0;
  for (const auto& [name, _] : archive.entries()) {
    if (auto l = pattern.layer_of(name)) n = std::max(n, *l + 1);
  }
  return n;
}

struct MergeRecord {
  std::string name;
  std::string action;  // "merged", "identical" or "excluded"
  std::optional<std::size_t> layer;
  double alpha = 0.0;
  double omega = 0.0;
  bool fallback = false;
};

struct MergeResult {
  TensorArchive archive;
  std::vector<MergeRecord> records;
};

/// Merges every tensor of `target` with its counterpart in `source`. Excluded
/// tensors are copied from `target` verbatim. Each merged tensor is flattened
/// and interpolated as one vector in f32, then written in the target's dtype
/// (or `output_dtype` when given).
inline MergeResult merge_archives(const TensorArchive& source, const TensorArchive& target,
                                  const MergeSchedule& schedule, std::optional<DType> output_dtype = std::nullopt) {
  schedule.validate();
  const LayerPattern pattern(schedule.layer_pattern);
  for (const auto& [name, _] : source.entries()) {
    if (!schedule.is_excluded(name) && !target.contains(name)) {
      throw NameError("tensor '" + name + "' is in the source model but not in the target");
    }
  }
  MergeResult result;
  result.archive.metadata() = target.metadata();
  for (const auto& [name, t] : target.entries()) {
    MergeRecord rec{name, "excluded", pattern.layer_of(name)};
    if (schedule.is_excluded(name)) {
      result.archive.insert(output_dtype ? cast(t, *output_dtype) : t);
      result.records.push_back(rec);
      continue;
    }
    if (!source.contains(name)) throw NameError("tensor '" + name + "' is in the target model but not in the source");
    const auto& s = source.at(name);
    if (s.shape != t.shape) {
      throw ShapeError("cannot merge '" + name + "': source shape " + shape_str(s.shape) + " vs target shape " +
                       shape_str(t.shape));
    }
    rec.alpha = rec.layer ? schedule.alpha_for_layer(*rec.layer) : schedule.non_layer_alpha;
    const DType out_dtype = output_dtype.value_or(t.dtype);
    if (s.dtype == t.dtype && s.data == t.data) {
      rec.action = "identical";
      result.archive.insert(cast(t, out_dtype));
    } else {
      const auto v0 = s.to_f32();
      const auto v1 = t.to_f32();
      SlerpInfo info;
      std::vector<float> merged;
      if (schedule.method == MergeMethod::kSlerp) {
        merged = slerp(v0, v1, rec.alpha, schedule.parallel_eps, &info);
      } else {
        merged = linear(v0, v1, rec.alpha);
      }
      rec.action = "merged";
      rec.omega = info.omega;
      rec.fallback = info.fallback;
      result.archive.insert(Tensor::from_f32(name, out_dtype, t.shape, merged));
    }
    result.records.push_back(rec);
  }
  return result;
}

inline nlohmann::json schedule_to_json(const MergeSchedule& s) {
  nlohmann::json per_layer = nlohmann::json::object();
  for (const auto& [l, a] : s.per_layer) per_layer[std::to_string(l)] = a;
  return {{"method", method_name(s.method)},
          {"default_alpha", s.default_alpha},
          {"non_layer_alpha", s.non_layer_alpha},
          {"per_layer", per_layer},
          {"excluded", s.excluded},
          {"layer_pattern", s.layer_pattern},
          {"parallel_eps", s.parallel_eps}};
}

inline nlohmann::json merge_report_json(const MergeSchedule& s, const MergeResult& r) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& rec : r.records) {
    nlohmann::json j{{"name", rec.name}, {"action", rec.action}};
    if (rec.layer) j["layer"] = *rec.layer;
    if (rec.action != "excluded") {
      j["alpha"] = rec.alpha;
      j["method"] = method_name(s.method);
    }
    if (rec.action == "merged" && s.method == MergeMethod::kSlerp) {
      j["omega"] = rec.omega;
      j["parallel_fallback"] = rec.fallback;
    }
    tensors.push_back(std::move(j));
  }
  return {{"schedule", schedule_to_json(s)}, {"tensors", tensors}};
}

// ---------------------------------------------------------------------------
// Chat vector: adapted + scale * (chat - base)

/// Applies the chat-minus-base difference to `adapted`. Where `adapted` is
/// larger along an axis (expanded vocabulary), only the leading block shaped
/// like `base` is updated; the extra rows/columns pass through unchanged, as
/// does every element whose difference is zero. Tensors present only in
/// `adapted` are copied.
inline TensorArchive chat_vector_apply(const TensorArchive& base, const TensorArchive& chat,
                                       const TensorArchive& adapted, double scale = 1.0) {
  if (!std::isfinite(scale)) throw NumericError("chat-vector scale must be finite");
  for (const auto& [name, _] : base.entries()) {
    if (!chat.contains(name)) throw NameError("tensor '" + name + "' is in the base model but not in the chat model");
    if (!adapted.contains(name)) throw NameError("tensor '" + name + "' is in the base model but not in the adapted model");
  }
  for (const auto& [name, _] : chat.entries()) {
    if (!base.contains(name)) throw NameError("tensor '" + name + "' is in the chat model but not in the base model");
  }

  TensorArchive out;
  out.metadata() = adapted.metadata();
  for (const auto& [name, a] : adapted.entries()) {
    if (!base.contains(name)) {
      out.insert(a);
      continue;
    }
    const auto& b = base.at(name);
    const auto& c = chat.at(name);
    if (b.shape != c.shape) {
      throw ShapeError("'" + name + "': base shape " + shape_str(b.shape) + " vs chat shape " + shape_str(c.shape));
    }
    if (a.shape.size() != b.shape.size()) {
      throw ShapeError("'" + name + "': adapted rank differs from base");
    }
    for (std::size_t d = 0; d < a.shape.size(); ++d) {
      if (a.shape[d] < b.shape[d]) {
        throw ShapeError("'" + name + "': adapted shape " + shape_str(a.shape) + " is smaller than base shape " +
                         shape_str(b.shape));
      }
    }
    Tensor r = a;
    const std::size_t rank = b.shape.size();
    std::vector<std::uint64_t> stride(rank, 1);
    for (std::size_t d = rank; d-- > 1;) stride[d - 1] = stride[d] * a.shape[d];
    std::vector<std::uint64_t> idx(rank, 0);
    const auto n = b.numel();
    for (std::uint64_t flat = 0; flat < n; ++flat) {
      const double delta = scale * (static_cast<double>(c.get(flat)) - b.get(flat));
      if (delta != 0.0) {
        std::uint64_t at = 0;
        for (std::size_t d = 0; d < rank; ++d) at += idx[d] * stride[d];
        r.set(at, static_cast<float>(a.get(at) + delta));
      }
      for (std::size_t d = rank; d-- > 0;) {
        if (++idx[d] < b.shape[d]) break;
        idx[d] = 0;
      }
    }
    out.insert(std::move(r));
  }
  return out;
}

}  // namespace elchat
