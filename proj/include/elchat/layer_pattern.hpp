#pragma once

#include <cstddef>
#include <optional>
#include <regex>
#include <string>

#include "elchat/error.hpp"

namespace elchat {

inline constexpr const char* kDefaultLayerPattern = "layers.{layer}.";

/// Recovers a layer index from a tensor name using a template containing one
/// "{layer}" placeholder, e.g. "model.layers.{layer}.". The template may match
/// anywhere in the name.
class LayerPattern {
 public:
  explicit LayerPattern(std::string tmpl = kDefaultLayerPattern) : template_(std::move(tmpl)) {
    const auto pos = template_.find("{layer}");
    if (pos == std::string::npos || template_.find("{layer}", pos + 1) != std::string::npos) {
      throw ValidationError("layer pattern '" + template_ + "' must contain exactly one {layer} placeholder");
    }
    regex_ = std::regex(escape(template_.substr(0, pos)) + "([0-9]+)" + escape(template_.substr(pos + 7)));
  }

  std::optional<std::size_t> layer_of(const std::string& name) const {
    std::smatch m;
    if (!std::regex_search(name, m, regex_)) return std::nullopt;
    return static_cast<std::size_t>(std::stoull(m[1].str()));
  }

  const std::string& str() const { return template_; }

 private:
  static std::string escape(const std::string& s) {
    static const std::string special = R"(\^$.|?*+()[]{})";
    std::string out;
    for (char c : s) {
      if (special.find(c) != std::string::npos) out.push_back('\\');
      out.push_back(c);
    }
    return out;
  }

  std::string template_;
  std::regex regex_;
};

}  // namespace elchat
