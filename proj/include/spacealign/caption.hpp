#pragma once

#include "spacealign/world.hpp"

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace spacealign {

// Caption grammar slots, in template order.
enum class Slot : std::size_t { size, roundness, color, vpos, hpos, bg };
inline constexpr std::size_t kNumSlots = 6;

std::string_view slot_name(Slot slot);
// Closed word list of a slot, indexed by label id.
const std::vector<std::string>& slot_words(Slot slot);

// Quantized label per slot; std::nullopt means "unspecified".
struct QuantizedLabels {
  std::array<std::optional<int>, kNumSlots> labels{};

  std::optional<int>& operator[](Slot s) { return labels[static_cast<std::size_t>(s)]; }
  const std::optional<int>& operator[](Slot s) const { return labels[static_cast<std::size_t>(s)]; }
  bool operator==(const QuantizedLabels&) const = default;

  // "size=large color=red ..." with "unspecified" for missing slots.
  std::string describe() const;
};

struct Caption {
  std::string text;
  std::vector<std::string> tokens;
  QuantizedLabels labels;
};

// Half-open thirds: [0, 1/3) -> 0, [1/3, 2/3) -> 1, [2/3, 1] -> 2.
int third_bin(double value);
// Nearest of the nine color anchors; ties go to the lexicographically smallest name.
int nearest_color(double r, double g, double b);
const std::array<double, 3>& color_anchor(int label);

QuantizedLabels quantize(const AttributeVector& a);
Caption caption(const AttributeVector& a);
// Canonical template text. Unspecified slots are left out, so partial
// label sets give phrases like "a red shape" or "a shape at the left".
std::string caption_text(const QuantizedLabels& labels);

// Inverse of the grammar. Accepts partial phrases built from the closed
// vocabulary; throws ParseError naming the first unknown word, or on two
// different labels for one slot.
QuantizedLabels parse_caption(std::string_view text);

// Splits on whitespace.
std::vector<std::string> tokenize(std::string_view text);

// Every word the grammar and the stock prompt templates may produce, slot
// words first in a fixed order.
const std::vector<std::string>& grammar_vocabulary();
// Only the slot words (the text encoder's feature set).
const std::vector<std::string>& slot_vocabulary();

}  // namespace spacealign
