#include "spacealign/caption.hpp"

#include <algorithm>
#include <sstream>

namespace spacealign {

namespace {

const std::array<std::vector<std::string>, kNumSlots> kSlotWords{{
    {"small", "medium", "large"},
    {"square", "rounded", "round"},
    {"red", "green", "blue", "yellow", "cyan", "magenta", "white", "black", "gray"},
    {"top", "middle", "bottom"},
    {"left", "center", "right"},
    {"dark", "plain", "light"},
}};

const std::array<std::array<double, 3>, 9> kColorAnchors{{
    {1.0, 0.0, 0.0},
    {0.0, 1.0, 0.0},
    {0.0, 0.0, 1.0},
    {1.0, 1.0, 0.0},
    {0.0, 1.0, 1.0},
    {1.0, 0.0, 1.0},
    {1.0, 1.0, 1.0},
    {0.0, 0.0, 0.0},
    {0.5, 0.5, 0.5},
}};

constexpr std::array<std::string_view, kNumSlots> kSlotNames{"size", "roundness", "color", "vpos", "hpos", "bg"};

// Template words plus the words of the stock prompt templates.
const std::vector<std::string> kFillerWords{"a",     "an",      "shape",     "at",      "the",     "on",
                                            "background", "photo", "of", "image", "rendering", "picture",
                                            "cropped", "drawing"};

}  // namespace

std::string_view slot_name(Slot slot) { return kSlotNames[static_cast<std::size_t>(slot)]; }

const std::vector<std::string>& slot_words(Slot slot) { return kSlotWords[static_cast<std::size_t>(slot)]; }

const std::array<double, 3>& color_anchor(int label) { return kColorAnchors.at(static_cast<std::size_t>(label)); }

std::string QuantizedLabels::describe() const {
  std::ostringstream out;
  for (std::size_t s = 0; s < kNumSlots; ++s) {
    if (s) out << ' ';
    out << kSlotNames[s] << '=';
    if (labels[s]) {
      out << kSlotWords[s][static_cast<std::size_t>(*labels[s])];
    } else {
      out << "unspecified";
    }
  }
  return out.str();
}

int third_bin(double value) {
  if (value < 1.0 / 3.0) return 0;
  if (value < 2.0 / 3.0) return 1;
  return 2;
}

int nearest_color(double r, double g, double b) {
  int best = -1;
  double best_dist = 0.0;
  const auto& names = kSlotWords[static_cast<std::size_t>(Slot::color)];
  for (int k = 0; k < static_cast<int>(kColorAnchors.size()); ++k) {
    const auto& anchor = kColorAnchors[static_cast<std::size_t>(k)];
    const double dist = (r - anchor[0]) * (r - anchor[0]) + (g - anchor[1]) * (g - anchor[1]) +
                        (b - anchor[2]) * (b - anchor[2]);
    if (best < 0 || dist < best_dist ||
        (dist == best_dist && names[static_cast<std::size_t>(k)] < names[static_cast<std::size_t>(best)])) {
      best = k;
      best_dist = dist;
    }
  }
  return best;
}

QuantizedLabels quantize(const AttributeVector& a) {
  QuantizedLabels q;
  q[Slot::size] = third_bin(a[kSize]);
  q[Slot::roundness] = third_bin(a[kRoundness]);
  q[Slot::color] = nearest_color(a[kFgR], a[kFgG], a[kFgB]);
  q[Slot::vpos] = third_bin(a[kPosY]);
  q[Slot::hpos] = third_bin(a[kPosX]);
  q[Slot::bg] = third_bin(a[kBgBrightness]);
  return q;
}

std::string caption_text(const QuantizedLabels& labels) {
  auto word = [&](Slot s) -> std::string {
    const auto& l = labels[s];
    return l ? kSlotWords[static_cast<std::size_t>(s)][static_cast<std::size_t>(*l)] + " " : std::string();
  };
  std::string text = "a " + word(Slot::size) + word(Slot::roundness) + word(Slot::color) + "shape";
  if (labels[Slot::vpos] || labels[Slot::hpos]) {
    text += " at the " + word(Slot::vpos) + word(Slot::hpos);
    text.pop_back();
  }
  if (labels[Slot::bg]) text += " on a " + word(Slot::bg) + "background";
  return text;
}

Caption caption(const AttributeVector& a) {
  Caption c;
  c.labels = quantize(a);
  c.text = caption_text(c.labels);
  c.tokens = tokenize(c.text);
  return c;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

QuantizedLabels parse_caption(std::string_view text) {
  QuantizedLabels q;
  for (const std::string& token : tokenize(text)) {
    bool known = std::find(kFillerWords.begin(), kFillerWords.end(), token) != kFillerWords.end();
    for (std::size_t s = 0; s < kNumSlots && !known; ++s) {
      const auto& words = kSlotWords[s];
      const auto it = std::find(words.begin(), words.end(), token);
      if (it == words.end()) continue;
      const int label = static_cast<int>(it - words.begin());
      if (q.labels[s] && *q.labels[s] != label) {
        throw ParseError("conflicting " + std::string(kSlotNames[s]) + " words in '" + std::string(text) + "': '" +
                             token + "'",
                         token);
      }
      q.labels[s] = label;
      known = true;
    }
    if (!known) throw ParseError("unknown word '" + token + "' (outside the caption vocabulary)", token);
  }
  return q;
}

const std::vector<std::string>& slot_vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v;
    for (const auto& words : kSlotWords) v.insert(v.end(), words.begin(), words.end());
    return v;
  }();
  return vocab;
}

const std::vector<std::string>& grammar_vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v = slot_vocabulary();
    v.insert(v.end(), kFillerWords.begin(), kFillerWords.end());
    return v;
  }();
  return vocab;
}

}  // namespace spacealign
