// SPDX-License-Identifier: Apache-2.0
//
// Synthetic five-symbol grammar used for end-to-end smoke runs: sentences
// of 3-6 words drawn from a fixed five-word lexicon over {a..e}, separated
// by single spaces.
#pragma once

#include "flowlm/corpus.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace flowlm::grammar {

const std::vector<std::string>& lexicon();
inline constexpr int kMinWords = 3;
inline constexpr int kMaxWords = 6;

std::vector<std::string> generate(std::size_t count, std::uint64_t seed);
bool valid_sentence(std::string_view text);
// START first, a valid sentence, then END followed only by PAD.
bool valid_sequence(const std::vector<int>& ids, const Vocabulary& vocab);

// Entropy in bits of the empirical character distribution (spaces included).
double unigram_bits_per_char(const std::vector<std::string>& lines);

}  // namespace flowlm::grammar
