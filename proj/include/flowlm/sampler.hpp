// SPDX-License-Identifier: Apache-2.0
//
// Generation from a trained model: DDIM-style star sampling, the conditional
// Markov chain with a noise mix, and Euler-Maruyama SDE/ODE integration.
#pragma once

#include "flowlm/autodiff.hpp"
#include "flowlm/forward_process.hpp"
#include "flowlm/model.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace flowlm {

using ad::Matrix;

enum class SamplerMethod { STAR_DDIM, MARKOV_CHAIN, SDE, ODE };
SamplerMethod parse_sampler_method(std::string_view s);
std::string to_string(SamplerMethod m);

// Fraction of fresh noise per chain step: a constant, or 1 - SNR(t)/SNR(s).
struct NoiseMix {
    bool snr_star = false;
    double value = 1.0;

    static NoiseMix constant(double v) { return {false, v}; }
    static NoiseMix star_snr() { return {true, 0.0}; }
};
// "star" -> 1, "snr-star" -> SNR policy, otherwise a number in [0, 1].
NoiseMix parse_noise_mix(std::string_view s);
std::string to_string(const NoiseMix& m);

struct SamplerConfig {
    SamplerMethod method = SamplerMethod::STAR_DDIM;
    int steps = 200;
    NoiseMix mix;
    double tau = 1.0;
    std::uint64_t seed = 0;
    bool keep_latents = false;
};

struct Trajectory {
    std::vector<double> times;    // 1, 1 - dt, ..., dt, 0
    std::vector<Matrix> latents;  // z at each time when kept, else only z_0
    std::vector<int> ids;         // decoded, [batch * seq_len]
};

// Clean-embedding estimate for z_t, all sequences sharing t.
using Denoiser = std::function<Matrix(const Matrix& z, double t)>;

struct SamplingProblem {
    const ForwardProcess* process = nullptr;
    Denoiser denoise;
    Matrix table;                    // embeddings used by the decoder
    const Matrix* context = nullptr;  // [batch x H] when the process needs one
    int batch = 1;
    int seq_len = 1;
    int hidden = 1;
    Matrix initial;  // z_1; drawn from N(0, I) when empty
};

// Predictor-backed problem for `batch` sequences.
SamplingProblem model_problem(const Model& model, int batch, const Matrix* context = nullptr);

// sqrt(1 - v) * eps_old + sqrt(v) * eps_new.
Matrix recombine_noise(const Matrix& eps_old, const Matrix& eps_new, double v);
Matrix recombine_noise(const Matrix& eps_old, const Matrix& eps_new, const Matrix& v);

// Time grid 1, 1 - 1/T, ..., 0 (T + 1 points).
std::vector<double> time_grid(int steps);

Trajectory sample_star(const SamplingProblem& p, const SamplerConfig& cfg);
Trajectory sample_chain(const SamplingProblem& p, const SamplerConfig& cfg);
Trajectory sample_sde(const SamplingProblem& p, const SamplerConfig& cfg);
Trajectory sample(const SamplingProblem& p, const SamplerConfig& cfg);

std::vector<int> decode_final(const Matrix& table, const Matrix& z0);

}  // namespace flowlm
