// SPDX-License-Identifier: Apache-2.0
//
// Training loop shared by the command-line tool and the acceptance suite.
// Step k draws batch BatchIterator::batch_at(k) and times/noise from
// mix_seed(seed, k), so a run resumed at step k continues exactly.
#pragma once

#include "flowlm/config.hpp"
#include "flowlm/corpus.hpp"
#include "flowlm/model.hpp"
#include "flowlm/objectives.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace flowlm {

struct Dataset {
    std::vector<TokenSequence> train;
    std::vector<TokenSequence> test;
};

// Builds the vocabulary from the training lines and encodes both splits.
std::pair<Vocabulary, Dataset> load_dataset(const RunConfig& cfg);
Dataset encode_dataset(const RunConfig& cfg, const Vocabulary& vocab, const std::vector<std::string>& train_lines,
                       const std::vector<std::string>& test_lines);

struct TrainState {
    RunConfig config;
    std::unique_ptr<Model> model;
    std::unique_ptr<Adam> adam;
    std::uint64_t step = 0;  // steps completed
};

TrainState fresh_state(const RunConfig& cfg, int vocab_size);

struct TrainRecord {
    enum class Kind { LOG, EVAL, CHECKPOINT };
    Kind kind = Kind::LOG;
    std::uint64_t step = 0;  // steps completed
    double loss = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
    LossBreakdown batch;
    std::optional<BpcReport> eval;
};

using TrainCallback = std::function<void(const TrainRecord&, const TrainState&)>;

// Evaluation subset: the first eval_sequences test sequences (all when 0).
std::vector<TokenSequence> eval_subset(const RunConfig& cfg, const std::vector<TokenSequence>& test);

// Runs until state.step == cfg.steps. Throws NumericalError (with the step
// index) on a non-finite loss or gradient.
void train(TrainState& state, const Dataset& data, const TrainCallback& callback);

}  // namespace flowlm
