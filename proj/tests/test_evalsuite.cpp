// SPDX-License-Identifier: Apache-2.0
#include "flowlm/corpus.hpp"
#include "flowlm/errors.hpp"
#include "flowlm/evalsuite.hpp"
#include "flowlm/grammar.hpp"
#include "testing.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

using namespace flowlm;
using flowlm::testing::random_matrix;
using flowlm::testing::tiny_spec;

namespace {

struct Smoke {
    Vocabulary vocab;
    std::vector<Tokens> seqs;
};

Smoke smoke(int seq_len, std::size_t n) {
    auto lines = grammar::generate(n, 1);
    Smoke out{build_vocab(lines, TokenMode::CHAR, 40), {}};
    for (const auto& s : encode_all(lines, out.vocab, seq_len)) out.seqs.push_back(s.ids);
    return out;
}

// Brute-force interpolated Kneser-Ney straight from the trigram multiset.
double kn_oracle(const std::vector<std::array<int, 3>>& tri, int vocab, double d, int u, int v, int w) {
    auto count = [&](auto pred) {
        int c = 0;
        for (const auto& g : tri) c += pred(g) ? 1 : 0;
        return c;
    };
    std::set<std::array<int, 3>> types(tri.begin(), tri.end());
    std::set<std::array<int, 2>> bigrams;
    for (const auto& g : types) bigrams.insert({g[1], g[2]});
    auto uni = [&](int x) {
        double n_x = 0, n_all = static_cast<double>(bigrams.size());
        std::set<int> seen;
        for (const auto& b : bigrams) {
            if (b[1] == x) n_x += 1;
            seen.insert(b[1]);
        }
        return std::max(n_x - d, 0.0) / n_all + d * static_cast<double>(seen.size()) / n_all / vocab;
    };
    auto bi = [&](int y, int x) {
        double n_yx = 0, n_y = 0;
        std::set<int> follow;
        for (const auto& g : types) {
            if (g[1] == y) {
                n_y += 1;
                follow.insert(g[2]);
                if (g[2] == x) n_yx += 1;
            }
        }
        if (n_y == 0) return uni(x);
        return std::max(n_yx - d, 0.0) / n_y + d * static_cast<double>(follow.size()) / n_y * uni(x);
    };
    const int c_uv = count([&](const auto& g) { return g[0] == u && g[1] == v; });
    if (c_uv == 0) return bi(v, w);
    const int c_uvw = count([&](const auto& g) { return g[0] == u && g[1] == v && g[2] == w; });
    std::set<int> follow;
    for (const auto& g : types) {
        if (g[0] == u && g[1] == v) follow.insert(g[2]);
    }
    return std::max(c_uvw - d, 0.0) / c_uv + d * static_cast<double>(follow.size()) / c_uv * bi(v, w);
}

std::set<std::string> ngram_set(const std::vector<Tokens>& seqs, std::size_t n, std::size_t* total) {
    std::set<std::string> out;
    for (const auto& raw : seqs) {
        Tokens s = strip_pad(raw);
        for (std::size_t i = 0; i + n <= s.size(); ++i) {
            std::string key;
            for (std::size_t j = 0; j < n; ++j) key += std::to_string(s[i + j]) + ",";
            out.insert(key);
            if (total) ++*total;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("uniform reference model has perplexity equal to the vocabulary size") {
    std::mt19937_64 gen(1);
    std::uniform_int_distribution<int> tok(0, 39);
    std::vector<Tokens> samples(20);
    for (auto& s : samples) {
        for (int i = 0; i < 30; ++i) {
            int t = tok(gen);
            s.push_back(t == Vocabulary::kPad ? 5 : t);
        }
    }
    UniformLM u(40);
    CHECK(oracle_ppl(samples, u).ppl == doctest::Approx(40.0).epsilon(1e-12));
    CHECK_THROWS_AS(oracle_ppl({}, u), InputError);
}

TEST_CASE("bigram self-perplexity matches a brute-force count") {
    Smoke sm = smoke(32, 200);
    const Vocabulary& v = sm.vocab;
    const auto& train = sm.seqs;
    BigramLM lm(train, v.size(), 1.0);
    std::map<std::pair<int, int>, double> pair;
    std::map<int, double> ctx;
    for (const auto& s : train) {
        Tokens t = strip_pad(s);
        for (std::size_t i = 1; i < t.size(); ++i) {
            pair[{t[i - 1], t[i]}] += 1;
            ctx[t[i - 1]] += 1;
        }
    }
    double nll = 0.0, n = 0.0;
    for (const auto& s : train) {
        Tokens t = strip_pad(s);
        for (std::size_t i = 1; i < t.size(); ++i) {
            nll -= std::log((pair[{t[i - 1], t[i]}] + 1.0) / (ctx[t[i - 1]] + v.size()));
            n += 1;
        }
    }
    CHECK(std::abs(oracle_ppl(train, lm).ppl - std::exp(nll / n)) < 1e-6);
}

TEST_CASE("Kneser-Ney trigram") {
    Smoke sm = smoke(32, 60);
    const Vocabulary& v = sm.vocab;
    const auto& train = sm.seqs;
    KneserNeyLM lm(train, v.size());
    std::vector<std::array<int, 3>> tri;
    for (const auto& s : train) {
        Tokens t = strip_pad(s);
        for (std::size_t i = 1; i < t.size(); ++i) tri.push_back({i >= 2 ? t[i - 2] : Vocabulary::kStart, t[i - 1], t[i]});
    }
    std::mt19937_64 gen(2);
    std::uniform_int_distribution<int> tok(0, v.size() - 1);
    for (int trial = 0; trial < 40; ++trial) {
        int a = tok(gen), b = tok(gen);
        if (trial % 2 == 0) {
            const auto& g = tri[static_cast<std::size_t>(trial) * 7 % tri.size()];
            a = g[0];
            b = g[1];
        }
        double total = 0.0;
        for (int w = 0; w < v.size(); ++w) {
            const double p = lm.prob(a, b, w);
            CHECK(p > 0.0);
            total += p;
            if (w % 3 == trial % 3) CHECK(std::abs(p - kn_oracle(tri, v.size(), 0.75, a, b, w)) < 1e-12);
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("copies of the reference model's greedy sequence score below the corpus") {
    Smoke sm = smoke(32, 200);
    const Vocabulary& v = sm.vocab;
    const auto& train = sm.seqs;
    KneserNeyLM lm(train, v.size());
    Tokens greedy{Vocabulary::kStart};
    while (greedy.size() < 20 && greedy.back() != Vocabulary::kEnd) {
        const int a = greedy.size() >= 2 ? greedy[greedy.size() - 2] : Vocabulary::kStart;
        int best = 0;
        for (int w = 1; w < v.size(); ++w) {
            if (lm.prob(a, greedy.back(), w) > lm.prob(a, greedy.back(), best)) best = w;
        }
        greedy.push_back(best);
    }
    std::vector<Tokens> copies(10, greedy);
    CHECK(oracle_ppl(copies, lm).ppl < oracle_ppl(train, lm).ppl);
}

TEST_CASE("diversity") {
    std::vector<Tokens> same(5, Tokens{4, 5, 6, 7, 8, 9});
    CHECK(diversity(same) == doctest::Approx(std::pow(1.0 / 5.0, 3)).epsilon(1e-14));
    std::vector<Tokens> unique{{4, 5, 6, 7}, {8, 9, 10, 11}, {12, 13, 14, 15, 2, 2}};
    CHECK(diversity(unique) == 1.0);
    CHECK_THROWS_AS(diversity({{4, 5, 6, 7}}), InputError);
    CHECK_THROWS_AS(diversity({{4, 5}, {6, 7, 8}}), InputError);

    std::vector<Tokens> mixed{{4, 5, 4, 5, 6, 2}, {5, 4, 5, 6, 7}, {4, 5, 6, 7, 4, 5}};
    double expect = 1.0;
    for (std::size_t n = 2; n <= 4; ++n) {
        std::size_t total = 0;
        auto uniq = ngram_set(mixed, n, &total);
        expect *= static_cast<double>(uniq.size()) / static_cast<double>(total);
    }
    CHECK(diversity(mixed) == expect);
}

TEST_CASE("memorization") {
    const auto train = smoke(32, 50).seqs;
    std::vector<Tokens> copied(train.begin(), train.begin() + 5);
    CHECK(memorization(copied, train) == 1.0);
    CHECK(memorization({{30, 31, 32, 33, 34}}, train) == 0.0);

    std::vector<Tokens> mixed{train[0], {30, 31, 32, 33, 34}, train[3]};
    mixed[2][3] = 35;
    std::size_t total = 0, hit = 0;
    auto train_grams = ngram_set(train, 4, nullptr);
    for (const auto& s : mixed) {
        Tokens t = strip_pad(s);
        for (std::size_t i = 0; i + 4 <= t.size(); ++i) {
            std::string key;
            for (std::size_t j = 0; j < 4; ++j) key += std::to_string(t[i + j]) + ",";
            ++total;
            hit += train_grams.count(key);
        }
    }
    CHECK(memorization(mixed, train) == static_cast<double>(hit) / static_cast<double>(total));
}

TEST_CASE("cosine time diagnostic") {
    std::mt19937_64 gen(3);
    Matrix fixed = random_matrix(gen, 5, 3);
    for (const auto& b : cosine_time_diagnostic([&](double) { return fixed; })) {
        CHECK(b.mean == doctest::Approx(1.0).epsilon(1e-14));
    }
    auto rot = [](double t) {
        const double a = t * 5.0 * std::numbers::pi;  // quarter turn per 0.1
        Matrix m(2, 2);
        m << std::cos(a), std::sin(a), -std::sin(a), std::cos(a);
        return m;
    };
    auto buckets = cosine_time_diagnostic(rot);
    REQUIRE(buckets.size() == 9);
    for (const auto& b : buckets) CHECK(std::abs(b.mean) < 1e-12);
    CHECK(buckets.front().t == doctest::Approx(0.1));

    Model m(tiny_spec(ProcessKind::STATIC_DLM, 9), 1);
    CHECK_THROWS_AS(cosine_time_diagnostic(m.process(), Matrix::Zero(6, 4)), UnsupportedPolicy);
    Model n(tiny_spec(ProcessKind::NFDM, 9), 1);
    CHECK(cosine_time_diagnostic(n.process(), random_matrix(gen, 12, 4)).size() == 9);
}

TEST_CASE("FNV-1a reference values") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("ablation table") {
    Smoke sm = smoke(24, 40);
    const Vocabulary& v = sm.vocab;
    const auto& train = sm.seqs;
    for (auto kind : {ProcessKind::STATIC_DLM, ProcessKind::MULAN}) {
        ModelSpec spec = tiny_spec(kind, v.size(), 24);
        spec.process.gamma.use_context = kind == ProcessKind::MULAN;
        Model model(spec, 4);
        KneserNeyLM lm(train, v.size());
        AblationInputs in;
        in.model = &model;
        in.oracle = &lm;
        in.train = &train;
        in.context_pool = &train;
        in.seeds = {1, 2};
        in.samples_per_seed = 4;
        in.checkpoint_digest = "abc";
        std::vector<SamplerConfig> grid;
        for (double mix : {1.0, 0.8, 0.5}) {
            SamplerConfig c;
            c.method = SamplerMethod::MARKOV_CHAIN;
            c.steps = 4;
            c.mix = NoiseMix::constant(mix);
            grid.push_back(c);
        }
        auto rows = ablation_run(in, grid);
        REQUIRE(rows.size() == 3);
        std::ostringstream a, b;
        write_ablation_csv(a, rows);
        write_ablation_csv(b, ablation_run(in, grid));
        CHECK(a.str() == b.str());
        CHECK(a.str().rfind("method,T,v_or_tau,ppl,ppl_se,diversity,memorization,bpc,seed_count\n", 0) == 0);
        CHECK(rows[0].metrics.fingerprint != rows[1].metrics.fingerprint);
        for (const auto& r : rows) {
            CHECK(r.seed_count == 2);
            CHECK(r.metrics.diversity >= 0.0);
            CHECK(r.metrics.diversity <= 1.0);
            CHECK(r.metrics.memorization >= 0.0);
            CHECK(r.metrics.memorization <= 1.0);
            CHECK(r.metrics.oracle_ppl > 0.0);
        }
    }
}

TEST_CASE("sequence helpers") {
    CHECK(strip_pad({0, 5, 1, 2, 2}) == Tokens{0, 5, 1});
    CHECK(strip_reserved({0, 5, 1, 2, 6, 3}) == Tokens{5, 6});
    CHECK(split_sequences({1, 2, 3, 4}, 2) == std::vector<Tokens>{{1, 2}, {3, 4}});
    CHECK_THROWS_AS(split_sequences({1, 2, 3}, 2), ShapeError);
}
