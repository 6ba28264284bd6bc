// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: INI files with [run], [data], [model], [process] and
// [optim] sections. Unknown keys are rejected.
#pragma once

#include "flowlm/corpus.hpp"
#include "flowlm/model.hpp"
#include "flowlm/objectives.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>

namespace flowlm {

struct RunConfig {
    // [run]
    std::uint64_t seed = 1;
    std::uint64_t steps = 2000;
    int batch_size = 32;
    std::uint64_t log_every = 100;
    std::uint64_t eval_every = 500;
    std::uint64_t checkpoint_every = 500;
    std::string out_dir = "run";
    // [data]
    std::string train_path;
    std::string test_path;
    TokenMode token_mode = TokenMode::CHAR;
    int max_vocab = 40;
    int seq_len = 32;
    int eval_draws = 16;
    int eval_sequences = 0;  // 0 = whole test set
    // [model]
    ProcessKind kind = ProcessKind::STATIC_DLM;
    int hidden = 16;
    double embedding_init_sd = 0.02;
    int predictor_width = 64;
    int predictor_layers = 2;
    int predictor_heads = 4;
    nn::TimeConditioning predictor_conditioning = nn::TimeConditioning::ADALN;
    int fourier_freqs = 16;
    double fourier_lo = 1.0;
    double fourier_hi = 50.0;
    bool mixture_head = true;
    bool likelihood_logits = true;
    double dropout = 0.0;
    int context_width = 32;
    int context_heads = 2;
    // [process]
    double delta = 0.01;
    double eta = 1.0;
    double gamma_min = -10.0;
    double gamma_max = 10.0;
    int gamma_degree = 8;
    bool gamma_context = true;
    int gamma_context_width = 32;
    bool fixed_average_snr = false;
    int nfdm_width = 32;
    int nfdm_layers = 1;
    int nfdm_heads = 2;
    nn::TimeConditioning nfdm_conditioning = nn::TimeConditioning::ADALN;
    int volatility_width = 16;
    double log_sigma_bar_init = 0.0;
    // [optim]
    LossMode loss = LossMode::MULAN_SIMPLIFIED;
    OptimConfig optim;
    bool lr_decay = true;

    ModelSpec model_spec(int vocab_size) const;
    OptimConfig optim_config() const;
};

// Throws ConfigError on unknown keys, bad values or an incompatible kind/loss pair.
RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::string& path);
// Effective configuration, every key, INI text.
std::string to_ini(const RunConfig& cfg);
void validate(const RunConfig& cfg);
// Sets one "section.key" without validating; ConfigError on unknown keys.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace flowlm
