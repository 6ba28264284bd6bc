// SPDX-License-Identifier: Apache-2.0
#include "flowlm/corpus.hpp"

#include "flowlm/errors.hpp"
#include "flowlm/rng.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>

namespace flowlm {

namespace {

const char* const kReservedNames[Vocabulary::kReserved] = {"<start>", "<end>", "<pad>", "<unk>"};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;  // stray continuation byte: keep as its own unit
}

std::size_t codepoints(std::string_view s) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < s.size(); i += utf8_length(static_cast<unsigned char>(s[i]))) ++n;
    return n;
}

}  // namespace

TokenMode parse_token_mode(std::string_view s) {
    if (s == "word") return TokenMode::WORD;
    if (s == "char") return TokenMode::CHAR;
    throw ConfigError("unknown token mode '" + std::string(s) + "' (expected word or char)");
}

std::string to_string(TokenMode m) { return m == TokenMode::WORD ? "word" : "char"; }

Vocabulary::Vocabulary(TokenMode mode, const std::vector<std::string>& regular_tokens) : mode_(mode) {
    tokens_.assign(kReservedNames, kReservedNames + kReserved);
    tokens_.insert(tokens_.end(), regular_tokens.begin(), regular_tokens.end());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
            throw InputError("duplicate vocabulary token '" + tokens_[i] + "'");
        }
    }
    if (size() < kReserved + 1) throw InputError("vocabulary needs at least one regular token");
}

int Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

void Vocabulary::save(std::ostream& out) const {
    for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(std::istream& in, TokenMode mode) {
    std::vector<std::string> lines = read_lines(in);
    if (lines.size() < static_cast<std::size_t>(kReserved)) throw FormatError("vocabulary file too short");
    for (int i = 0; i < kReserved; ++i) {
        if (lines[static_cast<std::size_t>(i)] != kReservedNames[i]) {
            throw FormatError("vocabulary file must start with the reserved tokens");
        }
    }
    return Vocabulary(mode, std::vector<std::string>(lines.begin() + kReserved, lines.end()));
}

std::vector<std::string> tokenize(std::string_view line, TokenMode mode) {
    std::vector<std::string> out;
    if (mode == TokenMode::WORD) {
        std::string cur;
        for (char c : line) {
            if (is_space(c)) {
                if (!cur.empty()) out.push_back(std::move(cur));
                cur.clear();
            } else {
                cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            }
        }
        if (!cur.empty()) out.push_back(std::move(cur));
        return out;
    }
    bool pending_space = false;
    for (std::size_t i = 0; i < line.size();) {
        if (is_space(line[i])) {
            pending_space = true;
            ++i;
            continue;
        }
        if (pending_space && !out.empty()) out.emplace_back(" ");
        pending_space = false;
        const std::size_t len = std::min(utf8_length(static_cast<unsigned char>(line[i])), line.size() - i);
        out.emplace_back(line.substr(i, len));
        i += len;
    }
    return out;
}

Vocabulary build_vocab(const std::vector<std::string>& lines, TokenMode mode, std::size_t max_size) {
    if (lines.empty()) throw InputError("build_vocab: empty corpus");
    if (max_size < static_cast<std::size_t>(Vocabulary::kReserved + 1)) {
        throw InputError("build_vocab: max_size must leave room for at least one regular token");
    }
    std::map<std::string, std::size_t> counts;
    for (const auto& line : lines) {
        for (auto& tok : tokenize(line, mode)) ++counts[tok];
    }
    for (const char* r : kReservedNames) counts.erase(r);
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    const std::size_t keep = std::min(ranked.size(), max_size - Vocabulary::kReserved);
    std::vector<std::string> regular;
    regular.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) regular.push_back(ranked[i].first);
    if (regular.empty()) throw InputError("build_vocab: corpus contains no tokens");
    return Vocabulary(mode, regular);
}

TokenSequence encode(std::string_view line, const Vocabulary& vocab, int seq_len) {
    if (seq_len < 3) throw InputError("encode: sequence length must be at least 3");
    std::vector<std::string> toks = tokenize(line, vocab.mode());
    const std::size_t room = static_cast<std::size_t>(seq_len - 2);
    if (toks.size() > room) toks.resize(room);
    // a truncated char sequence must not end on a dangling separator
    if (vocab.mode() == TokenMode::CHAR) {
        while (!toks.empty() && toks.back() == " ") toks.pop_back();
    }

    TokenSequence seq;
    seq.ids.assign(static_cast<std::size_t>(seq_len), Vocabulary::kPad);
    seq.ids[0] = Vocabulary::kStart;
    std::size_t chars = 0;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        seq.ids[i + 1] = vocab.id(toks[i]);
        chars += codepoints(toks[i]);
    }
    if (vocab.mode() == TokenMode::WORD && !toks.empty()) chars += toks.size() - 1;
    seq.ids[toks.size() + 1] = Vocabulary::kEnd;
    seq.char_count = static_cast<int>(std::max<std::size_t>(1, chars));
    return seq;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string out;
    bool first = true;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id == Vocabulary::kEnd) break;
        if (id == Vocabulary::kStart || id == Vocabulary::kPad) continue;
        if (vocab.mode() == TokenMode::WORD && !first) out.push_back(' ');
        out += vocab.token(id);
        first = false;
    }
    return out;
}

bool well_formed(const TokenSequence& seq) {
    const auto& ids = seq.ids;
    if (ids.empty() || ids[0] != Vocabulary::kStart || seq.char_count < 1) return false;
    auto end = std::find(ids.begin(), ids.end(), Vocabulary::kEnd);
    if (end == ids.end()) return false;
    if (std::find(ids.begin() + 1, end, Vocabulary::kPad) != end) return false;
    if (std::find(ids.begin() + 1, end, Vocabulary::kStart) != end) return false;
    return std::all_of(end + 1, ids.end(), [](int id) { return id == Vocabulary::kPad; });
}

std::vector<std::string> read_lines(std::istream& in) {
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        out.push_back(line);
    }
    return out;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    return read_lines(in);
}

std::vector<TokenSequence> encode_all(const std::vector<std::string>& lines, const Vocabulary& vocab, int seq_len) {
    std::vector<TokenSequence> out;
    out.reserve(lines.size());
    for (const auto& l : lines) {
        if (l.find_first_not_of(" \t") == std::string::npos) continue;
        out.push_back(encode(l, vocab, seq_len));
    }
    return out;
}

BatchIterator::BatchIterator(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : n_(dataset_size), batch_(batch_size), seed_(seed) {
    if (n_ == 0) throw InputError("batch iterator: empty dataset");
    if (batch_ == 0 || batch_ > n_) {
        throw InputError("batch size " + std::to_string(batch_) + " exceeds dataset size " + std::to_string(n_));
    }
    per_epoch_ = n_ / batch_;
}

std::vector<std::size_t> BatchIterator::permutation(std::uint64_t epoch) const {
    std::vector<std::size_t> perm(n_);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(mix_seed(seed_, epoch, 0xBA7C4));
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    return perm;
}

std::vector<std::size_t> BatchIterator::batch_at(std::uint64_t step) const {
    const std::uint64_t epoch = step / per_epoch_;
    const std::size_t offset = static_cast<std::size_t>(step % per_epoch_) * batch_;
    std::vector<std::size_t> perm = permutation(epoch);
    return {perm.begin() + static_cast<std::ptrdiff_t>(offset),
            perm.begin() + static_cast<std::ptrdiff_t>(offset + batch_)};
}

std::vector<int> gather_ids(const std::vector<TokenSequence>& data, const std::vector<std::size_t>& items) {
    std::vector<int> out;
    for (std::size_t i : items) {
        const auto& ids = data.at(i).ids;
        out.insert(out.end(), ids.begin(), ids.end());
    }
    return out;
}

}  // namespace flowlm
