// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "flowlm/forward_process.hpp"
#include "flowlm/nets.hpp"

#include <memory>
#include <optional>

namespace flowlm {

struct ModelSpec {
    int vocab = 10;
    int hidden = 16;
    int seq_len = 32;
    double embedding_init_sd = 0.02;
    nn::PredictorSpec predictor;
    ProcessSpec process;
    nn::ContextSpec context;
};

// Embedding table, predictor, forward process and (MULAN with auxiliary
// latent) the context encoder, sharing one parameter set.
class Model {
public:
    Model(const ModelSpec& spec, std::uint64_t seed);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelSpec& spec() const { return spec_; }
    bool uses_context() const { return process_->needs_context(); }

    nn::ParameterSet& params() { return params_; }
    const nn::ParameterSet& params() const { return params_; }
    const nn::EmbeddingTable& embedding() const { return *embedding_; }
    nn::EmbeddingTable& embedding() { return *embedding_; }
    const nn::Predictor& predictor() const { return *predictor_; }
    const ForwardProcess& process() const { return *process_; }

    // [B x H] context for the given sequences; invalid Var when unused.
    ad::Var context(ad::Tape& tape, const std::vector<int>& ids) const;
    ad::Matrix context_matrix(const std::vector<int>& ids) const;

    // Parameters that belong to the forward process (empty for STATIC).
    std::vector<ad::Parameter*> process_parameters();

private:
    ModelSpec spec_;
    nn::ParameterSet params_;
    std::unique_ptr<nn::EmbeddingTable> embedding_;
    std::unique_ptr<nn::Predictor> predictor_;
    std::unique_ptr<ForwardProcess> process_;
    std::unique_ptr<nn::ContextEncoder> context_;
};

}  // namespace flowlm
