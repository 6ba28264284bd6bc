// SPDX-License-Identifier: Apache-2.0
//
// Forward processes z_t = F(eps, t, x) = mu(x, t) + sigma(x, t) * eps for the
// static Diffusion-LM schedule, per-dimension learned gamma (MULAN), and the
// fully learned NFDM transformation, plus derived drifts and scores.
#pragma once

#include "flowlm/autodiff.hpp"
#include "flowlm/nets.hpp"

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace flowlm {

enum class ProcessKind { STATIC_DLM, MULAN, NFDM };
ProcessKind parse_process_kind(std::string_view s);
std::string to_string(ProcessKind k);

struct ProcessSpec {
    ProcessKind kind = ProcessKind::STATIC_DLM;
    int hidden = 16;
    int seq_len = 32;
    double delta = 0.01;
    double eta = 1.0;
    // MULAN
    nn::GammaNetSpec gamma;
    bool fixed_average_snr = false;
    // NFDM
    int nfdm_width = 32;
    int nfdm_layers = 1;
    int nfdm_heads = 2;
    nn::TimeConditioning nfdm_conditioning = nn::TimeConditioning::ADALN;
    nn::FourierTime fourier;
    int volatility_width = 16;
    // starting bias of log sigma_bar
    double log_sigma_bar_init = 0.0;
};

inline constexpr double kSigmaFloor = 1e-5;

struct GaussianMarginal {
    ad::Matrix mu;
    ad::Matrix sigma;
};

// Pieces of the reverse dynamics at (z, t) given a clean estimate x.
struct DriftTerms {
    ad::Matrix ode;    // f
    ad::Matrix score;  // grad log q(z_t | x)
    ad::Matrix g2;
};

// Marginal and its time derivatives at (x, t) for a batch of sequences, all
// [B*S x H] and recorded on the tape. gamma/dgamma are set only for the
// analytic-SNR kinds; dmu/dsigma only when derivatives were requested.
struct Jet {
    ad::Var mu;
    ad::Var sigma;
    ad::Var dmu;
    ad::Var dsigma;
    ad::Var gamma;
    ad::Var dgamma;
    ad::Var g2;
};

class ForwardProcess {
public:
    ForwardProcess(nn::ParameterSet& ps, const ProcessSpec& spec, Rng& rng);

    const ProcessSpec& spec() const { return spec_; }
    ProcessKind kind() const { return spec_.kind; }
    bool needs_context() const { return spec_.kind == ProcessKind::MULAN && spec_.gamma.use_context; }
    bool has_analytic_snr() const { return spec_.kind != ProcessKind::NFDM; }

    // x: [B*S x H]; times: one per sequence in [0, 1]; context [B x H] iff needs_context().
    Jet jet(ad::Tape& tape, const ad::Var& x, const std::vector<double>& times, const ad::Var* context,
            bool with_derivatives) const;

    // Convenience evaluation on plain matrices with a single shared t.
    GaussianMarginal marginal(const ad::Matrix& x, double t, const ad::Matrix* context = nullptr) const;
    ad::Matrix sample_zt(const ad::Matrix& eps, double t, const ad::Matrix& x, const ad::Matrix* context = nullptr) const;
    ad::Matrix invert(const ad::Matrix& z, double t, const ad::Matrix& x, const ad::Matrix* context = nullptr) const;
    ad::Matrix ode_drift(const ad::Matrix& z, double t, const ad::Matrix& x, const ad::Matrix* context = nullptr) const;
    ad::Matrix score(const ad::Matrix& z, double t, const ad::Matrix& x, const ad::Matrix* context = nullptr) const;
    ad::Matrix drift_forward(const ad::Matrix& z, double t, const ad::Matrix& x, const ad::Matrix* context = nullptr) const;
    ad::Matrix drift_backward(const ad::Matrix& z, double t, const ad::Matrix& x, const ad::Matrix* context = nullptr) const;
    DriftTerms drift_terms(const ad::Matrix& z, double t, const ad::Matrix& x, const ad::Matrix* context = nullptr) const;
    // Volatility g^2 broadcast to [B*S x H].
    ad::Matrix volatility(const ad::Matrix& x, double t, const ad::Matrix* context = nullptr) const;
    // gamma per coordinate (analytic kinds only).
    ad::Matrix gamma(const ad::Matrix& x, double t, const ad::Matrix* context = nullptr) const;

    // NFDM only: raw network outputs (mu_bar, log sigma_bar) at t.
    std::pair<ad::Matrix, ad::Matrix> nfdm_outputs(const ad::Matrix& x, double t) const;

private:
    Jet analytic_jet(ad::Tape& tape, const ad::Var& x, const ad::Var& gamma, const ad::Var& dgamma) const;
    Jet nfdm_jet(ad::Tape& tape, const ad::Var& x, const std::vector<double>& times, bool with_derivatives) const;
    Jet eval_jet(ad::Tape& tape, const ad::Matrix& x, double t, const ad::Matrix* context, bool deriv) const;

    ProcessSpec spec_;
    std::unique_ptr<nn::GammaNet> gamma_net_;
    std::unique_ptr<nn::Backbone> nfdm_net_;
    std::unique_ptr<nn::VolatilityNet> volatility_net_;
};

// Jet-level helpers shared by losses and samplers.
ad::Var latent_from_eps(const Jet& j, const ad::Var& eps);
ad::Var eps_from_latent(const Jet& j, const ad::Var& z);
ad::Var ode_drift(const Jet& j, const ad::Var& eps);
ad::Var score(const Jet& j, const ad::Var& z);
// f - g^2/2 * score
ad::Var backward_drift(const Jet& j, const ad::Var& z);
ad::Var forward_drift(const Jet& j, const ad::Var& z);

// Throws DegenerateError when any sigma falls below the floor.
void require_sigma_floor(const ad::Matrix& sigma);

}  // namespace flowlm
