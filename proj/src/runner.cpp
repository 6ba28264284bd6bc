// SPDX-License-Identifier: Apache-2.0
#include "flowlm/runner.hpp"

#include "flowlm/errors.hpp"
#include "flowlm/rng.hpp"

namespace flowlm {

Dataset encode_dataset(const RunConfig& cfg, const Vocabulary& vocab, const std::vector<std::string>& train_lines,
                       const std::vector<std::string>& test_lines) {
    Dataset d{encode_all(train_lines, vocab, cfg.seq_len), encode_all(test_lines, vocab, cfg.seq_len)};
    if (d.train.empty()) throw InputError("training corpus has no sequences");
    return d;
}

std::pair<Vocabulary, Dataset> load_dataset(const RunConfig& cfg) {
    if (cfg.train_path.empty()) throw ConfigError("data.train is not set");
    if (cfg.test_path.empty()) throw ConfigError("data.test is not set");
    const auto train_lines = read_lines(cfg.train_path);
    const auto test_lines = read_lines(cfg.test_path);
    Vocabulary vocab = build_vocab(train_lines, cfg.token_mode, static_cast<std::size_t>(cfg.max_vocab));
    Dataset d = encode_dataset(cfg, vocab, train_lines, test_lines);
    return {std::move(vocab), std::move(d)};
}

TrainState fresh_state(const RunConfig& cfg, int vocab_size) {
    TrainState s;
    s.config = cfg;
    s.model = std::make_unique<Model>(cfg.model_spec(vocab_size), cfg.seed);
    s.adam = std::make_unique<Adam>(cfg.optim_config());
    return s;
}

std::vector<TokenSequence> eval_subset(const RunConfig& cfg, const std::vector<TokenSequence>& test) {
    if (cfg.eval_sequences == 0 || static_cast<std::size_t>(cfg.eval_sequences) >= test.size()) return test;
    return {test.begin(), test.begin() + cfg.eval_sequences};
}

void train(TrainState& state, const Dataset& data, const TrainCallback& callback) {
    const RunConfig& cfg = state.config;
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    BatchIterator batches(data.train.size(), batch, cfg.seed);
    const std::vector<TokenSequence> eval_set = eval_subset(cfg, data.test);
    const std::uint64_t eval_seed = mix_seed(cfg.seed, 0xE7A1);
    while (state.step < cfg.steps) {
        const std::uint64_t k = state.step;
        Rng rng(mix_seed(cfg.seed, k));
        const Draws draws = antithetic_draws(rng, cfg.batch_size, cfg.seq_len, cfg.hidden);
        TrainRecord rec;
        rec.lr = state.adam->lr_at(state.adam->steps());
        StepResult r;
        try {
            r = train_step(*state.model, *state.adam, gather_ids(data.train, batches.batch_at(k)), draws, cfg.loss);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " at step " + std::to_string(k));
        }
        state.step = k + 1;
        rec.step = state.step;
        rec.loss = r.loss;
        rec.grad_norm = r.grad_norm;
        rec.batch = r.mean;
        const bool last = state.step == cfg.steps;
        if (cfg.log_every > 0 && (state.step % cfg.log_every == 0 || last)) {
            rec.kind = TrainRecord::Kind::LOG;
            callback(rec, state);
        }
        if (!eval_set.empty() && cfg.eval_every > 0 && (state.step % cfg.eval_every == 0 || last)) {
            rec.kind = TrainRecord::Kind::EVAL;
            rec.eval = estimate_bpc(*state.model, eval_set, cfg.eval_draws, eval_seed);
            callback(rec, state);
            rec.eval.reset();
        }
        if (cfg.checkpoint_every > 0 && (state.step % cfg.checkpoint_every == 0 || last)) {
            rec.kind = TrainRecord::Kind::CHECKPOINT;
            callback(rec, state);
        }
    }
}

}  // namespace flowlm
