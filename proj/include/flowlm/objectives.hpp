// SPDX-License-Identifier: Apache-2.0
//
// Diffusion, reconstruction and prior terms of the continuous-time ELBO,
// the rescaled x-prediction loss, bits-per-character estimation and the
// optimizer step. Conventions: every term is in nats per sequence, summed
// over hidden dimensions and positions; training divides by S and averages
// over the batch.
#pragma once

#include "flowlm/corpus.hpp"
#include "flowlm/model.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace flowlm {

enum class LossMode { NFDM_FULL, MULAN_SIMPLIFIED, RESCALED_XPRED };
LossMode parse_loss_mode(std::string_view s);
std::string to_string(LossMode m);

// Throws ConfigError for incompatible (kind, loss) pairs.
void check_compatibility(const ProcessSpec& process, LossMode mode);

struct LossBreakdown {
    double diff_nats = 0.0;
    double rec_nats = 0.0;
    double prior_nats = 0.0;
    int char_count = 1;
    LossMode mode = LossMode::NFDM_FULL;

    double total() const { return diff_nats + rec_nats + prior_nats; }
};

// One draw of the stochastic inputs for a batch of B sequences.
struct Draws {
    std::vector<double> times;  // B
    ad::Matrix eps;             // [B*S x H] diffusion noise
    ad::Matrix eps_rec;         // [B*S x H] noise for z_0
};

// Uniform t with antithetic pairs (t, 1 - t) across the two halves.
Draws antithetic_draws(Rng& rng, int batch, int seq_len, int hidden);
Draws uniform_draws(Rng& rng, int batch, int seq_len, int hidden);

// Per-sequence terms as [B x 1] tape variables.
struct BatchTerms {
    ad::Var diff;
    ad::Var rec;
    ad::Var prior;
};

struct TermOptions {
    LossMode mode = LossMode::NFDM_FULL;
    // Count PAD positions in the reconstruction term.
    bool rec_includes_pad = false;
};

BatchTerms batch_terms(ad::Tape& tape, const Model& model, const std::vector<int>& ids, const Draws& draws,
                       const TermOptions& opts);

// Individual terms on explicit inputs; x, x_hat are [B*S x H].
ad::Var diff_loss_nfdm(ad::Tape& tape, const ForwardProcess& fp, const ad::Var& x, const ad::Var& x_hat,
                       const ad::Var& z, const std::vector<double>& times, const ad::Var* context);
ad::Var mulan_simplified_loss(const Jet& jet, const ad::Var& x, const ad::Var& x_hat, int seq_len);
ad::Var rescaled_xpred_loss(const ad::Var& x, const ad::Var& x_hat, int seq_len);
// Token cross-entropy of softmax(z0 E^T); mask selects counted positions.
ad::Var rec_loss(ad::Tape& tape, const ad::Var& z0, const ad::Var& table, const std::vector<int>& ids,
                 const std::vector<bool>& mask, int seq_len);
ad::Var prior_loss(const Jet& at_one, int seq_len);

// ELBO-consistent estimator for the process kind: the full drift-matching
// loss for NFDM, the lambda_x-weighted form for the analytic kinds.
LossMode elbo_mode(ProcessKind kind);

struct BpcReport {
    double bpc = 0.0;
    // Standard error across sequences of the per-sequence estimate.
    double se = 0.0;
    // Monte-Carlo standard error from the K time draws alone.
    double mc_se = 0.0;
    double diff_nats = 0.0;
    double rec_nats = 0.0;
    double prior_nats = 0.0;
    std::size_t sequences = 0;
    int draws = 0;
    std::vector<double> per_sequence;  // bpc per sequence
};

// K independent draws per sequence from streams keyed by (seed, index, k),
// so the result does not depend on how sequences are batched.
BpcReport estimate_bpc(const Model& model, const std::vector<TokenSequence>& data, int draws, std::uint64_t seed,
                       std::size_t batch_size = 64);
double bpc(const LossBreakdown& b);

struct OptimConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.5;
    std::uint64_t clip_after = 0;
    // linear decay to lr * final_lr_fraction over total_steps (0 disables)
    std::uint64_t total_steps = 0;
    double final_lr_fraction = 1.0;
    std::uint64_t warmup_steps = 0;
};

class Adam {
public:
    explicit Adam(const OptimConfig& cfg) : cfg_(cfg) {}

    // Returns the pre-clip global gradient norm.
    double step(const std::vector<ad::Parameter*>& params);
    double lr_at(std::uint64_t step) const;

    std::uint64_t steps() const { return t_; }
    std::vector<ad::Matrix>& first_moments() { return m_; }
    std::vector<ad::Matrix>& second_moments() { return v_; }
    const std::vector<ad::Matrix>& first_moments() const { return m_; }
    const std::vector<ad::Matrix>& second_moments() const { return v_; }
    void set_state(std::uint64_t t, std::vector<ad::Matrix> m, std::vector<ad::Matrix> v);

private:
    OptimConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<ad::Matrix> m_;
    std::vector<ad::Matrix> v_;
};

struct StepResult {
    LossBreakdown mean;  // batch means in nats per sequence
    double loss = 0.0;   // optimized scalar
    double grad_norm = 0.0;
};

// One optimizer update on the mode-selected loss. Throws NumericalError on
// non-finite loss or gradients.
StepResult train_step(Model& model, Adam& opt, const std::vector<int>& ids, const Draws& draws, LossMode mode);

}  // namespace flowlm
