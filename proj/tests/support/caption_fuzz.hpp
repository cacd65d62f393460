#pragma once

#include <random>
#include <string>
#include <vector>

#include "cigli/corpus.hpp"

namespace cigli::testing {

// Random captions drawn from words that trigger (and nearly trigger) every filter rule.
inline std::string fuzz_caption(std::mt19937_64& rng) {
  static const std::vector<std::string> words{
      "there", "are", "is", "exactly", "two", "three", "one", "4", "dogs", "dog", "cats", "in", "total",
      "altogether", "combined", "image", "images", "one", "of", "the", "left", "right", "other", "while",
      "either", "or", "each", "both", "at", "least", "most", "a", "puppy", "shows", "contains", "and",
      "picture", "THERE", "Total", ",", "."};
  std::uniform_int_distribution<std::size_t> len(1, 12), pick(0, words.size() - 1);
  std::string s;
  const std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += (rng() % 5 == 0) ? "  " : " ";
    s += words[pick(rng)];
  }
  return s;
}

inline corpus::Dataset fuzz_dataset(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  corpus::Dataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    corpus::DataPoint dp;
    dp.identifier = "fuzz-" + std::to_string(seed) + "-" + std::to_string(i);
    dp.caption = fuzz_caption(rng);
    dp.label = rng() % 3 != 0;
    dp.left_image = dp.identifier + "-img0.png";
    dp.right_image = dp.identifier + "-img1.png";
    ds.points.push_back(std::move(dp));
  }
  return ds;
}

}  // namespace cigli::testing
