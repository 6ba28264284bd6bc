// SPDX-License-Identifier: Apache-2.0
#include "flowlm/checkpoint.hpp"
#include "flowlm/config.hpp"
#include "flowlm/errors.hpp"
#include "flowlm/grammar.hpp"

#include <doctest.h>

#include <sstream>

using namespace flowlm;

namespace {

RunConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

std::string bytes(const Checkpoint& ck) {
    std::ostringstream os;
    write_checkpoint(os, ck);
    return os.str();
}

Checkpoint from_bytes(const std::string& b) {
    std::istringstream in(b);
    return read_checkpoint(in);
}

}  // namespace

TEST_CASE("config parsing") {
    RunConfig c = parse(
        "; comment\n[run]\nseed = 7\nsteps = 10\n[model]\nkind = nfdm\nhidden = 8\n[optim]\nloss = nfdm_full\nlr = 0.002\n");
    CHECK(c.seed == 7);
    CHECK(c.steps == 10);
    CHECK(c.kind == ProcessKind::NFDM);
    CHECK(c.hidden == 8);
    CHECK(c.optim.lr == 0.002);
    CHECK(c.batch_size == RunConfig{}.batch_size);

    CHECK_THROWS_AS(parse("[run]\nsede = 7\n"), ConfigError);
    CHECK_THROWS_AS(parse("[run]\nsteps = ten\n"), ConfigError);
    CHECK_THROWS_AS(parse("[model]\nkind = vae\n"), ConfigError);
    CHECK_THROWS_AS(parse("[model]\nkind = nfdm\n[optim]\nloss = rescaled_xpred\n"), ConfigError);
    CHECK_THROWS_AS(parse("[model]\nkind = mulan\n[optim]\nloss = rescaled_xpred\n"), ConfigError);
    CHECK_NOTHROW(parse("[model]\nkind = mulan\n[process]\nfixed_average_snr = true\n[optim]\nloss = rescaled_xpred\n"));
    CHECK_THROWS_AS(parse("[process]\ngamma_min = 5\ngamma_max = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse("[model]\ndropout = 0.1\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/flowlm.ini"), ConfigError);
}

TEST_CASE("effective config round-trips") {
    RunConfig c = parse("[model]\nkind = mulan\nembedding_init_sd = 0.3\n[process]\ngamma_min = -4.6\n");
    const std::string ini = to_ini(c);
    RunConfig d = parse(ini);
    CHECK(to_ini(d) == ini);
    CHECK(d.gamma_min == -4.6);
    CHECK(d.embedding_init_sd == 0.3);
}

TEST_CASE("checkpoint round-trip is byte-identical") {
    RunConfig cfg = parse(
        "[data]\nseq_len = 16\n[model]\nkind = mulan\nhidden = 4\npredictor_width = 8\npredictor_heads = 2\n"
        "context_width = 8\n[process]\ngamma_degree = 3\ngamma_context_width = 8\n");
    auto lines = grammar::generate(30, 1);
    Vocabulary vocab = build_vocab(lines, TokenMode::CHAR, 40);
    auto data = encode_all(lines, vocab, cfg.seq_len);
    Model model(cfg.model_spec(vocab.size()), cfg.seed);
    Adam adam(cfg.optim_config());
    Rng rng(3);
    std::vector<std::size_t> items{0, 1, 2, 3};
    train_step(model, adam, gather_ids(data, items), antithetic_draws(rng, 4, cfg.seq_len, cfg.hidden), cfg.loss);

    const std::string first = bytes(capture(cfg, vocab, model, adam, 1));
    Restored r = restore(from_bytes(first));
    const std::string second = bytes(capture(r.config, r.vocab, *r.model, *r.adam, r.step));
    CHECK(first == second);
    CHECK(r.step == 1);
    CHECK(r.vocab.tokens() == vocab.tokens());

    std::string bad_version = first;
    bad_version[8] = 9;
    CHECK_THROWS_AS(from_bytes(bad_version), FormatError);
    std::string bad_magic = first;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(from_bytes(bad_magic), FormatError);
    CHECK_THROWS_AS(from_bytes(first.substr(0, first.size() - 3)), FormatError);
    CHECK_THROWS_AS(from_bytes(first + "x"), FormatError);
}

TEST_CASE("resumed training continues the uninterrupted run exactly") {
    RunConfig cfg = parse(
        "[data]\nseq_len = 16\n[model]\nkind = nfdm\nhidden = 4\npredictor_width = 8\npredictor_heads = 2\n"
        "[process]\nnfdm_width = 8\n[optim]\nloss = nfdm_full\n");
    auto lines = grammar::generate(40, 1);
    Vocabulary vocab = build_vocab(lines, TokenMode::CHAR, 40);
    auto data = encode_all(lines, vocab, cfg.seq_len);
    BatchIterator it(data.size(), 4, cfg.seed);
    auto step = [&](Model& m, Adam& a, std::uint64_t k) {
        Rng rng(mix_seed(cfg.seed, k));
        return train_step(m, a, gather_ids(data, it.batch_at(k)), antithetic_draws(rng, 4, cfg.seq_len, cfg.hidden),
                          cfg.loss)
            .loss;
    };
    Model full(cfg.model_spec(vocab.size()), cfg.seed);
    Adam full_adam(cfg.optim_config());
    std::vector<double> losses;
    for (std::uint64_t k = 0; k < 6; ++k) losses.push_back(step(full, full_adam, k));

    Model part(cfg.model_spec(vocab.size()), cfg.seed);
    Adam part_adam(cfg.optim_config());
    for (std::uint64_t k = 0; k < 3; ++k) step(part, part_adam, k);
    Restored r = restore(from_bytes(bytes(capture(cfg, vocab, part, part_adam, 3))));
    for (std::uint64_t k = 3; k < 6; ++k) CHECK(step(*r.model, *r.adam, k) == losses[k]);
    CHECK(bytes(capture(cfg, vocab, full, full_adam, 6)) == bytes(capture(cfg, vocab, *r.model, *r.adam, 6)));
}
