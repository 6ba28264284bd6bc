// SPDX-License-Identifier: Apache-2.0
#include "flowlm/model.hpp"

#include "flowlm/errors.hpp"

namespace flowlm {

Model::Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
    if (spec.vocab < 5) throw ConfigError("vocabulary must hold at least 5 tokens");
    spec_.predictor.hidden = spec.hidden;
    spec_.predictor.vocab = spec.vocab;
    spec_.predictor.seq_len = spec.seq_len;
    spec_.process.hidden = spec.hidden;
    spec_.process.seq_len = spec.seq_len;
    const bool ctx = spec.process.kind == ProcessKind::MULAN && spec.process.gamma.use_context;
    spec_.predictor.use_context = ctx;
    spec_.context.vocab = spec.vocab;
    spec_.context.hidden = spec.hidden;
    spec_.context.seq_len = spec.seq_len;

    Rng rng(mix_seed(seed, 0x1417));
    embedding_ = std::make_unique<nn::EmbeddingTable>(params_, spec.vocab, spec.hidden, rng, spec.embedding_init_sd);
    predictor_ = std::make_unique<nn::Predictor>(params_, spec_.predictor, rng);
    process_ = std::make_unique<ForwardProcess>(params_, spec_.process, rng);
    if (ctx) context_ = std::make_unique<nn::ContextEncoder>(params_, spec_.context, rng);
}

ad::Var Model::context(ad::Tape& tape, const std::vector<int>& ids) const {
    if (!context_) return {};
    return context_->forward(tape, ids);
}

ad::Matrix Model::context_matrix(const std::vector<int>& ids) const {
    if (!context_) return {};
    ad::Tape tape(false);
    return context_->forward(tape, ids).value();
}

std::vector<ad::Parameter*> Model::process_parameters() {
    std::vector<ad::Parameter*> out;
    for (const char* prefix : {"gamma.", "nfdm.", "volatility."}) {
        for (auto* p : params_.with_prefix(prefix)) out.push_back(p);
    }
    return out;
}

}  // namespace flowlm
