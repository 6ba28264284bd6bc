// SPDX-License-Identifier: Apache-2.0
//
// Tokenization into fixed-length id sequences: [START, tokens..., END, PAD...].
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace flowlm {

enum class TokenMode { WORD, CHAR };

TokenMode parse_token_mode(std::string_view s);
std::string to_string(TokenMode m);

class Vocabulary {
public:
    static constexpr int kStart = 0;
    static constexpr int kEnd = 1;
    static constexpr int kPad = 2;
    static constexpr int kUnk = 3;
    static constexpr int kReserved = 4;

    Vocabulary(TokenMode mode, const std::vector<std::string>& regular_tokens);

    int size() const { return static_cast<int>(tokens_.size()); }
    TokenMode mode() const { return mode_; }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    // UNK for unknown strings.
    int id(const std::string& token) const;
    bool contains(const std::string& token) const { return index_.count(token) > 0; }

    // One token per line, reserved tokens first.
    void save(std::ostream& out) const;
    static Vocabulary load(std::istream& in, TokenMode mode);

private:
    TokenMode mode_;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

struct TokenSequence {
    std::vector<int> ids;
    int char_count = 1;

    int length() const { return static_cast<int>(ids.size()); }
};

// Lowercased whitespace split (word mode) or UTF-8 code points with
// whitespace runs collapsed to one space (char mode).
std::vector<std::string> tokenize(std::string_view line, TokenMode mode);

Vocabulary build_vocab(const std::vector<std::string>& lines, TokenMode mode, std::size_t max_size);

TokenSequence encode(std::string_view line, const Vocabulary& vocab, int seq_len);

// Text between START and END; UNK renders as its reserved string.
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

// Checks the layout invariants: START first, END present, PAD only as suffix.
bool well_formed(const TokenSequence& seq);

std::vector<std::string> read_lines(std::istream& in);
std::vector<std::string> read_lines(const std::string& path);
std::vector<TokenSequence> encode_all(const std::vector<std::string>& lines, const Vocabulary& vocab, int seq_len);

// Shuffled fixed-size batches. Epoch e uses a permutation seeded from
// (seed, e), so batch_at(k) is a pure function and resumption is exact.
class BatchIterator {
public:
    BatchIterator(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);

    std::size_t batches_per_epoch() const { return per_epoch_; }
    std::vector<std::size_t> batch_at(std::uint64_t step) const;
    std::vector<std::size_t> next() { return batch_at(step_++); }
    std::uint64_t position() const { return step_; }
    void seek(std::uint64_t step) { step_ = step; }

private:
    std::vector<std::size_t> permutation(std::uint64_t epoch) const;

    std::size_t n_;
    std::size_t batch_;
    std::size_t per_epoch_;
    std::uint64_t seed_;
    std::uint64_t step_ = 0;
};

// Row-major [B x S] ids for the selected items.
std::vector<int> gather_ids(const std::vector<TokenSequence>& data, const std::vector<std::size_t>& items);

}  // namespace flowlm
