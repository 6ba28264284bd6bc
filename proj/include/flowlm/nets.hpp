// SPDX-License-Identifier: Apache-2.0
//
// Learnable components: embedding table, transformer backbone with Fourier
// time conditioning, the clean-embedding predictor, the context encoder and
// the per-dimension monotone gamma network.
#pragma once

#include "flowlm/autodiff.hpp"
#include "flowlm/dual.hpp"
#include "flowlm/rng.hpp"

#include <deque>
#include <string>
#include <string_view>
#include <vector>

namespace flowlm::nn {

using ad::Dual;
using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

class ParameterSet {
public:
    Parameter& add(std::string name, Matrix value);
    Parameter& get(std::string_view name);
    const Parameter& get(std::string_view name) const;
    bool has(std::string_view name) const;

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    std::vector<Parameter*> with_prefix(std::string_view prefix);
    std::size_t scalar_count() const;
    void zero_grad();

private:
    std::deque<Parameter> params_;
};

Matrix normal_init(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sd);

struct Linear {
    Parameter* w = nullptr;
    Parameter* b = nullptr;

    Linear() = default;
    Linear(ParameterSet& ps, const std::string& name, int in, int out, Rng& rng, double sd = -1.0);
    Dual operator()(Tape& tape, const Dual& x) const;
};

enum class TimeConditioning { ADDITIVE, ADALN };
TimeConditioning parse_time_conditioning(std::string_view s);
std::string to_string(TimeConditioning m);

// sin/cos features at log-spaced angular frequencies in [lo, hi].
struct FourierTime {
    int freqs = 64;
    double lo = 1.0;
    double hi = 50.0;

    // [B x 2F]; with_tangent attaches the analytic d/dt.
    Dual features(Tape& tape, const std::vector<double>& times, bool with_tangent) const;
};

struct BackboneSpec {
    int in_dim = 16;
    int out_dim = 16;
    int width = 64;
    int layers = 2;
    int heads = 4;
    int seq_len = 32;
    bool timed = true;
    TimeConditioning conditioning = TimeConditioning::ADALN;
    FourierTime fourier;
    // Extra leading positions per sequence (context token).
    int prefix_tokens = 0;
};

// Pre-norm transformer over [B*S x in_dim] blocks of seq_len rows.
class Backbone {
public:
    Backbone(ParameterSet& ps, const std::string& name, const BackboneSpec& spec, Rng& rng);

    // prefix, when given, is [B x width] and occupies the first position of
    // each sequence; it is dropped from the output.
    Dual forward(Tape& tape, const Dual& x, const std::vector<double>& times, bool time_tangent,
                 const Var* prefix = nullptr) const;

    const BackboneSpec& spec() const { return spec_; }

private:
    struct Block {
        Parameter* ln1_gain = nullptr;
        Parameter* ln1_bias = nullptr;
        Parameter* ln2_gain = nullptr;
        Parameter* ln2_bias = nullptr;
        Linear modulation;  // ADALN: time -> shift1, scale1, shift2, scale2
        Linear qkv;
        Linear proj;
        Linear up;
        Linear down;
    };

    Dual norm(Tape& tape, const Dual& h, Parameter* gain, Parameter* bias, const Dual* shift,
              const Dual* scale) const;
    Dual attention(Tape& tape, const Block& blk, const Dual& h, Eigen::Index len) const;

    BackboneSpec spec_;
    Linear time_in;
    Linear time_out;
    Linear in_proj;
    Parameter* pos = nullptr;
    std::vector<Block> blocks_;
    Parameter* final_gain = nullptr;
    Parameter* final_bias = nullptr;
    Linear final_modulation;
    Linear out_proj;
};

// Learned E: [V x H], rows initialized N(0, 0.02^2).
class EmbeddingTable {
public:
    EmbeddingTable(ParameterSet& ps, int vocab, int hidden, Rng& rng, double sd = 0.02);

    Parameter& table() { return *table_; }
    const Parameter& table() const { return *table_; }
    Var var(Tape& tape) const { return tape.param(*table_); }
    // [B*S x H]; throws InputError on ids >= V.
    Var embed(Tape& tape, const std::vector<int>& ids) const;

private:
    Parameter* table_;
};

// logits[s, v] = z0[s] . E[v]
Matrix decode_logits(const Matrix& table, const Matrix& z0);
// Argmax per row, lowest index on ties.
std::vector<int> decode_argmax(const Matrix& table, const Matrix& z0);

struct PredictorSpec {
    int hidden = 16;
    int vocab = 10;
    int seq_len = 32;
    int width = 64;
    int layers = 2;
    int heads = 4;
    TimeConditioning conditioning = TimeConditioning::ADALN;
    FourierTime fourier;
    // x_hat = softmax(logits) E instead of a free linear readout.
    bool mixture_head = true;
    // Adds a(t) z.E_v - b(t) |E_v|^2 to the mixture logits, a and b learned from t.
    bool likelihood_logits = true;
    bool use_context = false;
};

// (z_t, t) -> clean-embedding estimate, shape preserved.
class Predictor {
public:
    Predictor(ParameterSet& ps, const PredictorSpec& spec, Rng& rng);

    // z: [B*S x H]; times: one per sequence; table: E on the same tape;
    // context: [B x H] when use_context.
    Var forward(Tape& tape, const Var& z, const std::vector<double>& times, const Var& table,
                const Var* context = nullptr) const;

    const PredictorSpec& spec() const { return spec_; }

private:
    PredictorSpec spec_;
    Backbone backbone_;
    Linear context_proj_;
    Linear likelihood_;
};

struct ContextSpec {
    int vocab = 10;
    int hidden = 16;
    int seq_len = 32;
    int width = 32;
    int heads = 2;
};

// ids -> c in R^H via a one-block untimed transformer and mean pooling.
class ContextEncoder {
public:
    ContextEncoder(ParameterSet& ps, const ContextSpec& spec, Rng& rng);
    // [B x H]
    Var forward(Tape& tape, const std::vector<int>& ids) const;

private:
    ContextSpec spec_;
    Parameter* tokens_;
    Backbone backbone_;
};

struct GammaNetSpec {
    int seq_len = 32;
    int hidden = 16;
    int degree = 8;
    double gamma_min = -10.0;
    double gamma_max = 10.0;
    bool use_context = false;
    int context_width = 32;
};

// Per-dimension monotone gamma(t) in [gamma_min, gamma_max]:
// gamma_min + (gamma_max - gamma_min) p(t) / p(1), p(t) = sum_k a_k t^(k+1)/(k+1)
// with a_k = softplus(base + mlp(c)).
class GammaNet {
public:
    GammaNet(ParameterSet& ps, const GammaNetSpec& spec, Rng& rng);

    struct Output {
        Var gamma;   // [B*S x H]
        Var dgamma;  // [B*S x H]
    };
    Output forward(Tape& tape, const std::vector<double>& times, const Var* context = nullptr) const;

    const GammaNetSpec& spec() const { return spec_; }

private:
    GammaNetSpec spec_;
    Parameter* base_;
    Linear ctx_in_;
    Linear ctx_out_;
};

// Learned scalar volatility g^2(t) = softplus(mlp(fourier(t))) + floor.
class VolatilityNet {
public:
    static constexpr double kFloor = 1e-4;
    VolatilityNet(ParameterSet& ps, const FourierTime& fourier, int width, Rng& rng);
    // [B x 1]
    Var forward(Tape& tape, const std::vector<double>& times) const;

private:
    FourierTime fourier_;
    Linear in_;
    Linear out_;
};

}  // namespace flowlm::nn
