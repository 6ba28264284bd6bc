// SPDX-License-Identifier: Apache-2.0
#include "flowlm/grammar.hpp"

#include "flowlm/errors.hpp"
#include "flowlm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace flowlm::grammar {

const std::vector<std::string>& lexicon() {
    static const std::vector<std::string> words{"abc", "bcd", "cde", "dea", "eab"};
    return words;
}

std::vector<std::string> generate(std::size_t count, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x6A3));
    std::vector<std::string> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto n = static_cast<int>(kMinWords + rng.below(kMaxWords - kMinWords + 1));
        std::string line;
        for (int w = 0; w < n; ++w) {
            if (w > 0) line.push_back(' ');
            line += lexicon()[rng.below(lexicon().size())];
        }
        out.push_back(std::move(line));
    }
    return out;
}

bool valid_sentence(std::string_view text) {
    int words = 0;
    std::size_t pos = 0;
    while (true) {
        const std::size_t next = text.find(' ', pos);
        const std::string_view word = text.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos);
        if (std::find(lexicon().begin(), lexicon().end(), word) == lexicon().end()) return false;
        ++words;
        if (next == std::string_view::npos) break;
        pos = next + 1;
    }
    return words >= kMinWords && words <= kMaxWords;
}

bool valid_sequence(const std::vector<int>& ids, const Vocabulary& vocab) {
    if (ids.empty() || ids[0] != Vocabulary::kStart) return false;
    std::string text;
    std::size_t i = 1;
    for (; i < ids.size() && ids[i] != Vocabulary::kEnd; ++i) {
        const int id = ids[i];
        if (id < Vocabulary::kReserved || id >= vocab.size()) return false;
        text += vocab.token(id);
    }
    if (i == ids.size()) return false;
    for (++i; i < ids.size(); ++i) {
        if (ids[i] != Vocabulary::kPad) return false;
    }
    return valid_sentence(text);
}

double unigram_bits_per_char(const std::vector<std::string>& lines) {
    std::map<char, double> counts;
    double total = 0.0;
    for (const auto& l : lines) {
        for (char c : l) {
            counts[c] += 1.0;
            total += 1.0;
        }
    }
    if (total == 0.0) throw InputError("unigram entropy of an empty corpus");
    double h = 0.0;
    for (const auto& [c, n] : counts) h -= (n / total) * std::log2(n / total);
    return h;
}

}  // namespace flowlm::grammar
