#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "cigli/captionpipe.hpp"

namespace cigli::testing {

using caption::Hypothesis;
using caption::StepDecoder;

// Markov decoder: next-token distribution depends only on the last token.
class ToyDecoder : public StepDecoder {
 public:
  ToyDecoder(int vocab, int eos, std::mt19937_64& rng) : v_(vocab), eos_(eos) {
    std::normal_distribution<double> n(0.0, 1.5);
    table_.assign(static_cast<std::size_t>(vocab + 1), std::vector<double>(static_cast<std::size_t>(vocab)));
    for (auto& row : table_) {
      double z = 0;
      for (double& x : row) z += (x = std::exp(n(rng)));
      for (double& x : row) x = std::log(x / z);
    }
  }
  int vocab_size() const override { return v_; }
  int eos() const override { return eos_; }
  std::vector<std::vector<double>> next_logprobs(const std::vector<std::vector<int>>& prefixes) override {
    std::vector<std::vector<double>> out;
    for (const auto& p : prefixes) out.push_back(table_[p.empty() ? static_cast<std::size_t>(v_) : static_cast<std::size_t>(p.back())]);
    return out;
  }
  double score(const std::vector<int>& seq) const {
    double s = 0;
    for (std::size_t i = 0; i < seq.size(); ++i)
      s += table_[i == 0 ? static_cast<std::size_t>(v_) : static_cast<std::size_t>(seq[i - 1])][static_cast<std::size_t>(seq[i])];
    return s;
  }

 private:
  int v_, eos_;
  std::vector<std::vector<double>> table_;
};

// Every complete sequence: ends in EOS, or has length max_len with no EOS.
inline std::vector<Hypothesis> enumerate_all(const ToyDecoder& dec, int max_len) {
  std::vector<Hypothesis> out;
  std::vector<std::vector<int>> frontier{{}};
  for (int len = 1; len <= max_len; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& p : frontier) {
      for (int v = 0; v < dec.vocab_size(); ++v) {
        auto s = p;
        s.push_back(v);
        if (v == dec.eos() || len == max_len) {
          out.push_back({s, dec.score(s)});
        } else {
          next.push_back(s);
        }
      }
    }
    frontier = std::move(next);
  }
  std::sort(out.begin(), out.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return a.logprob != b.logprob ? a.logprob > b.logprob : a.tokens < b.tokens;
  });
  return out;
}

}  // namespace cigli::testing
