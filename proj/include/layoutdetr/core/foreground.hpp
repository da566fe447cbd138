#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "layoutdetr/core/errors.hpp"
#include "layoutdetr/core/geometry.hpp"
#include "layoutdetr/core/image.hpp"
#include "layoutdetr/core/utf8.hpp"

namespace layoutdetr {

// The four annotation categories; logos are folded into header.
enum class TextClass { header = 0, body = 1, disclaimer = 2, button = 3 };
inline constexpr int kTextClassCount = 4;

inline constexpr std::array<std::string_view, kTextClassCount> kTextClassNames = {
    "header", "body", "disclaimer", "button"};

inline std::string_view to_string(TextClass c) { return kTextClassNames[static_cast<int>(c)]; }

inline std::optional<TextClass> parse_text_class(std::string_view name) {
  for (int i = 0; i < kTextClassCount; ++i)
    if (kTextClassNames[i] == name) return static_cast<TextClass>(i);
  return std::nullopt;
}

inline TextClass text_class_or_throw(std::string_view name) {
  if (auto c = parse_text_class(name)) return *c;
  throw ValidationError("unknown text class '" + std::string(name) + "'");
}

struct TextElement {
  std::string text;
  TextClass cls = TextClass::body;

  // Character (code point) count of the string.
  std::size_t length() const { return utf8::length(text); }
  friend bool operator==(const TextElement&, const TextElement&) = default;
};

struct ImageElement {
  Image patch;
  friend bool operator==(const ImageElement&, const ImageElement&) = default;
};

using ForegroundElement = std::variant<TextElement, ImageElement>;

inline bool is_text(const ForegroundElement& e) { return std::holds_alternative<TextElement>(e); }

struct ForegroundSet {
  std::vector<ForegroundElement> elements;

  std::size_t size() const { return elements.size(); }
  std::size_t text_count() const {
    std::size_t m = 0;
    for (const auto& e : elements) m += is_text(e) ? 1 : 0;
    return m;
  }
  std::size_t image_count() const { return size() - text_count(); }
  friend bool operator==(const ForegroundSet&, const ForegroundSet&) = default;
};

inline void validate_foreground(const ForegroundSet& fg) {
  for (std::size_t i = 0; i < fg.elements.size(); ++i) {
    if (const auto* img = std::get_if<ImageElement>(&fg.elements[i])) {
      if (img->patch.height < 1 || img->patch.width < 1)
        throw ValidationError("foreground element " + std::to_string(i) + ": empty image patch");
    }
  }
}

struct DesignSample {
  std::string id;
  Image background;
  ForegroundSet foreground;
  Layout layout;
};

inline void validate_sample(const DesignSample& s) {
  require_valid(s.background, "background");
  validate_foreground(s.foreground);
  validate_layout(s.layout);
  if (s.layout.size() != s.foreground.size())
    throw ValidationError("sample " + s.id + ": layout length differs from foreground length");
}

}  // namespace layoutdetr
