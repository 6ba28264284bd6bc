// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoints: magic, format version, the effective config, the
// vocabulary, every parameter by name and shape, Adam state, seed and step.
#pragma once

#include "flowlm/autodiff.hpp"
#include "flowlm/config.hpp"
#include "flowlm/corpus.hpp"
#include "flowlm/model.hpp"
#include "flowlm/objectives.hpp"

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace flowlm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedMatrix {
    std::string name;
    ad::Matrix value;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::string config_ini;
    std::vector<std::string> vocab_tokens;
    TokenMode token_mode = TokenMode::CHAR;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    std::vector<NamedMatrix> params;
    std::uint64_t adam_steps = 0;
    std::vector<ad::Matrix> adam_m;
    std::vector<ad::Matrix> adam_v;
};

// FormatError on bad magic, version mismatch or truncation.
void write_checkpoint(std::ostream& out, const Checkpoint& ck);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint capture(const RunConfig& cfg, const Vocabulary& vocab, const Model& model, const Adam& adam,
                   std::uint64_t step);

// Live objects rebuilt from a checkpoint.
struct Restored {
    RunConfig config;
    Vocabulary vocab;
    std::unique_ptr<Model> model;
    std::unique_ptr<Adam> adam;
    std::uint64_t step = 0;
};
Restored restore(const Checkpoint& ck);

}  // namespace flowlm
