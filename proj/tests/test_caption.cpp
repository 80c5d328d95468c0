#include "spacealign/caption.hpp"
#include "spacealign/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace spacealign;

namespace {

AttributeVector attrs(std::initializer_list<double> v) {
  AttributeVector a;
  std::size_t i = 0;
  for (double x : v) a[i++] = x;
  return a;
}

// Loop-based reference quantizer.
int ref_third(double v) {
  const double edges[] = {1.0 / 3.0, 2.0 / 3.0};
  int bin = 0;
  for (double e : edges) {
    if (v >= e) ++bin;
  }
  return bin;
}

}  // namespace

TEST(Caption, TableLookupExample) {
  EXPECT_EQ(caption(attrs({0.9, 0.9, 0.5, 0.5, 1, 0, 0, 0.1})).text,
            "a large round red shape at the middle center on a dark background");
}

TEST(Caption, GrayAnchorIsExact) {
  const Caption c = caption(attrs({0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.0}));
  EXPECT_EQ(slot_words(Slot::color)[static_cast<std::size_t>(*c.labels[Slot::color])], "gray");
}

TEST(Caption, HalfOpenBinsMatchLoopQuantizer) {
  EXPECT_EQ(third_bin(1.0 / 3.0), 1);
  EXPECT_EQ(third_bin(2.0 / 3.0), 2);
  EXPECT_EQ(third_bin(std::nextafter(1.0 / 3.0, 0.0)), 0);
  EXPECT_EQ(third_bin(1.0), 2);
  EXPECT_EQ(third_bin(0.0), 0);
  AttributeVector a = attrs({1.0 / 3.0, 0.5, 0.5, 0.5, 1, 0, 0, 0.1});
  EXPECT_EQ(slot_words(Slot::size)[static_cast<std::size_t>(*caption(a).labels[Slot::size])], "medium");
  Rng rng(3);
  for (int t = 0; t < 5000; ++t) {
    const double v = rng.uniform();
    ASSERT_EQ(third_bin(v), ref_third(v)) << v;
  }
}

TEST(Caption, ColorTieGoesToSmallestName) {
  // Equidistant from black (0,0,0) and blue (0,0,1); "black" < "blue".
  EXPECT_EQ(slot_words(Slot::color)[static_cast<std::size_t>(nearest_color(0.0, 0.0, 0.5))], "black");
  EXPECT_EQ(slot_words(Slot::color)[static_cast<std::size_t>(nearest_color(0.3, 0.3, 0.5))], "gray");
}

TEST(Caption, ParseRoundTripOnSamples) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    AttributeVector a;
    for (double& v : a.values) v = rng.uniform();
    const Caption c = caption(a);
    EXPECT_EQ(parse_caption(c.text), c.labels) << c.text;
  }
}

TEST(Caption, PartialPhrase) {
  const QuantizedLabels l = parse_caption("a red shape");
  EXPECT_EQ(slot_words(Slot::color)[static_cast<std::size_t>(*l[Slot::color])], "red");
  for (Slot s : {Slot::size, Slot::roundness, Slot::vpos, Slot::hpos, Slot::bg}) EXPECT_FALSE(l[s].has_value());
  EXPECT_EQ(caption_text(l), "a red shape");
  const QuantizedLabels left = parse_caption("a shape at the left");
  EXPECT_TRUE(left[Slot::hpos].has_value());
  EXPECT_FALSE(left[Slot::vpos].has_value());
}

TEST(Caption, UnknownWordNamed) {
  try {
    parse_caption("a crimson shape");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.token(), "crimson");
    EXPECT_NE(std::string(e.what()).find("crimson"), std::string::npos);
  }
}

TEST(Caption, ConflictingLabelsRejected) { EXPECT_THROW(parse_caption("a red blue shape"), ParseError); }

TEST(Caption, ExhaustiveBijectivity) {
  std::size_t count = 0;
  std::set<std::string> texts;
  QuantizedLabels l;
  for (int size = 0; size < 3; ++size)
    for (int round = 0; round < 3; ++round)
      for (int color = 0; color < 9; ++color)
        for (int v = 0; v < 3; ++v)
          for (int h = 0; h < 3; ++h)
            for (int bg = 0; bg < 3; ++bg) {
              l[Slot::size] = size;
              l[Slot::roundness] = round;
              l[Slot::color] = color;
              l[Slot::vpos] = v;
              l[Slot::hpos] = h;
              l[Slot::bg] = bg;
              const std::string text = caption_text(l);
              ASSERT_EQ(parse_caption(text), l) << text;
              ASSERT_EQ(caption_text(parse_caption(text)), text);
              texts.insert(text);
              ++count;
            }
  EXPECT_EQ(count, 2187u);
  EXPECT_EQ(texts.size(), 2187u);
}
