// SPDX-License-Identifier: Apache-2.0
//
// Sample-quality metrics: perplexity under a reference n-gram model,
// distinct-n diversity, 4-gram memorization, the time-conditioning cosine
// diagnostic and the sampler ablation table.
#pragma once

#include "flowlm/autodiff.hpp"
#include "flowlm/forward_process.hpp"
#include "flowlm/sampler.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace flowlm {

class Model;

using Tokens = std::vector<int>;

// Drops PAD positions.
Tokens strip_pad(const Tokens& ids);
// Drops every reserved id (START, END, PAD, UNK).
Tokens strip_reserved(const Tokens& ids);
// Splits a flat [n * seq_len] id array into sequences.
std::vector<Tokens> split_sequences(const Tokens& flat, int seq_len);

// Reference model scoring token i from the two preceding tokens; positions
// before the start read as START.
class ReferenceLM {
public:
    virtual ~ReferenceLM() = default;
    virtual double prob(int prev2, int prev1, int token) const = 0;
    virtual int vocab() const = 0;
};

class UniformLM : public ReferenceLM {
public:
    explicit UniformLM(int vocab);
    double prob(int, int, int token) const override;
    int vocab() const override { return vocab_; }

private:
    int vocab_;
};

// Add-k smoothed bigram.
class BigramLM : public ReferenceLM {
public:
    BigramLM(const std::vector<Tokens>& train, int vocab, double k = 1.0);
    double prob(int, int prev1, int token) const override;
    int vocab() const override { return vocab_; }

private:
    int vocab_;
    double k_;
    std::vector<double> counts_;  // [prev1 * V + token]
    std::vector<double> totals_;
};

// Interpolated Kneser-Ney trigram with absolute discount D.
class KneserNeyLM : public ReferenceLM {
public:
    KneserNeyLM(const std::vector<Tokens>& train, int vocab, double discount = 0.75);
    double prob(int prev2, int prev1, int token) const override;
    int vocab() const override { return vocab_; }

private:
    double unigram(int token) const;
    double bigram(int prev1, int token) const;

    int vocab_;
    double d_;
    std::map<std::array<int, 3>, int> tri_;
    std::map<std::array<int, 2>, int> tri_ctx_total_;   // c(u v .)
    std::map<std::array<int, 2>, int> tri_ctx_types_;   // N1+(u v .)
    std::map<std::array<int, 2>, int> cont_bi_;         // N1+(. v w)
    std::map<int, int> cont_bi_ctx_total_;              // sum_w N1+(. v w)
    std::map<int, int> cont_bi_ctx_types_;              // #{w : N1+(. v w) > 0}
    std::vector<int> cont_uni_;                         // N1+(. w)
    double cont_uni_total_ = 0.0;
    int cont_uni_types_ = 0;
};

enum class OracleKind { KN_TRIGRAM, BIGRAM, UNIFORM };
OracleKind parse_oracle_kind(std::string_view s);
std::unique_ptr<ReferenceLM> make_oracle(OracleKind kind, const std::vector<Tokens>& train, int vocab);

struct Perplexity {
    double ppl = 0.0;
    double se = 0.0;  // delta-method, from per-sample NLL spread
    std::size_t tokens = 0;
};

// exp(mean NLL per token) over PAD-stripped samples; the first token of each
// sample is given, every later one is scored.
Perplexity oracle_ppl(const std::vector<Tokens>& samples, const ReferenceLM& oracle);

// prod_{n=2..4} unique n-grams / n-grams, pooled over samples.
double diversity(const std::vector<Tokens>& samples);
// Fraction of sample 4-grams that occur in the training set.
double memorization(const std::vector<Tokens>& samples, const std::vector<Tokens>& train);

struct CosineBucket {
    double t = 0.0;  // compares t and t + 0.1
    double mean = 0.0;
    double sd = 0.0;
};
// Row-wise cosine between successive outputs of mu_bar on t = 0.1, ..., 1.0.
std::vector<CosineBucket> cosine_time_diagnostic(const std::function<ad::Matrix(double)>& mu_bar);
std::vector<CosineBucket> cosine_time_diagnostic(const ForwardProcess& process, const ad::Matrix& x);

struct MetricsReport {
    double oracle_ppl = 0.0;
    double oracle_ppl_se = 0.0;
    double diversity = 0.0;
    double diversity_se = 0.0;
    double memorization = 0.0;
    double memorization_se = 0.0;
    double bpc = 0.0;
    double bpc_se = 0.0;
    std::string fingerprint;
};

// 64-bit FNV-1a, hex encoded.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

struct AblationRow {
    SamplerConfig sampler;
    MetricsReport metrics;
    std::size_t seed_count = 0;
};

struct AblationInputs {
    const Model* model = nullptr;
    const ReferenceLM* oracle = nullptr;
    const std::vector<Tokens>* train = nullptr;
    // Sequences whose encodings provide the MULAN context at sampling time.
    const std::vector<Tokens>* context_pool = nullptr;
    std::vector<std::uint64_t> seeds;
    int samples_per_seed = 16;
    double bpc = 0.0;
    double bpc_se = 0.0;
    std::string checkpoint_digest;
};

// Generates samples for one sampler configuration, one batch per seed.
std::vector<Tokens> generate(const Model& model, const SamplerConfig& cfg, int count,
                             const std::vector<Tokens>* context_pool);

std::vector<AblationRow> ablation_run(const AblationInputs& in, const std::vector<SamplerConfig>& grid);
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace flowlm
