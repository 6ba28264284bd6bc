// SPDX-License-Identifier: Apache-2.0
#include "flowlm/evalsuite.hpp"

#include "flowlm/corpus.hpp"
#include "flowlm/errors.hpp"
#include "flowlm/model.hpp"
#include "flowlm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

namespace flowlm {

Tokens strip_pad(const Tokens& ids) {
    Tokens out;
    for (int id : ids) {
        if (id != Vocabulary::kPad) out.push_back(id);
    }
    return out;
}

Tokens strip_reserved(const Tokens& ids) {
    Tokens out;
    for (int id : ids) {
        if (id >= Vocabulary::kReserved) out.push_back(id);
    }
    return out;
}

std::vector<Tokens> split_sequences(const Tokens& flat, int seq_len) {
    if (seq_len < 1 || flat.size() % static_cast<std::size_t>(seq_len) != 0) {
        throw ShapeError("split_sequences: length is not a multiple of seq_len");
    }
    std::vector<Tokens> out;
    for (std::size_t i = 0; i < flat.size(); i += static_cast<std::size_t>(seq_len)) {
        out.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(i),
                         flat.begin() + static_cast<std::ptrdiff_t>(i) + seq_len);
    }
    return out;
}

namespace {

void check_token(int token, int vocab) {
    if (token < 0 || token >= vocab) throw InputError("reference model: token id out of range");
}

template <typename F>
void for_each_trigram(const std::vector<Tokens>& seqs, F&& f) {
    for (const Tokens& raw : seqs) {
        const Tokens s = strip_pad(raw);
        for (std::size_t i = 1; i < s.size(); ++i) {
            const int u = i >= 2 ? s[i - 2] : Vocabulary::kStart;
            f(u, s[i - 1], s[i]);
        }
    }
}

}  // namespace

UniformLM::UniformLM(int vocab) : vocab_(vocab) {
    if (vocab < 1) throw InputError("uniform model: empty vocabulary");
}

double UniformLM::prob(int, int, int token) const {
    check_token(token, vocab_);
    return 1.0 / vocab_;
}

BigramLM::BigramLM(const std::vector<Tokens>& train, int vocab, double k)
    : vocab_(vocab), k_(k), counts_(static_cast<std::size_t>(vocab) * vocab, 0.0), totals_(vocab, 0.0) {
    if (vocab < 1) throw InputError("bigram model: empty vocabulary");
    if (!(k > 0.0)) throw InputError("bigram model: smoothing must be positive");
    for_each_trigram(train, [&](int, int v, int w) {
        check_token(v, vocab_);
        check_token(w, vocab_);
        counts_[static_cast<std::size_t>(v) * vocab_ + w] += 1.0;
        totals_[v] += 1.0;
    });
}

double BigramLM::prob(int, int prev1, int token) const {
    check_token(prev1, vocab_);
    check_token(token, vocab_);
    return (counts_[static_cast<std::size_t>(prev1) * vocab_ + token] + k_) / (totals_[prev1] + k_ * vocab_);
}

KneserNeyLM::KneserNeyLM(const std::vector<Tokens>& train, int vocab, double discount)
    : vocab_(vocab), d_(discount), cont_uni_(vocab, 0) {
    if (vocab < 1) throw InputError("Kneser-Ney model: empty vocabulary");
    if (!(discount > 0.0 && discount < 1.0)) throw InputError("Kneser-Ney model: discount must lie in (0, 1)");
    for_each_trigram(train, [&](int u, int v, int w) {
        check_token(u, vocab_);
        check_token(v, vocab_);
        check_token(w, vocab_);
        ++tri_[{u, v, w}];
    });
    std::set<std::array<int, 2>> bigram_types;
    for (const auto& [key, count] : tri_) {
        const auto [u, v, w] = key;
        tri_ctx_total_[{u, v}] += count;
        ++tri_ctx_types_[{u, v}];
        ++cont_bi_[{v, w}];
        bigram_types.insert({v, w});
    }
    for (const auto& [key, n] : cont_bi_) {
        cont_bi_ctx_total_[key[0]] += n;
        ++cont_bi_ctx_types_[key[0]];
    }
    for (const auto& key : bigram_types) ++cont_uni_[key[1]];
    for (int n : cont_uni_) {
        cont_uni_total_ += n;
        if (n > 0) ++cont_uni_types_;
    }
}

double KneserNeyLM::unigram(int w) const {
    if (cont_uni_total_ == 0.0) return 1.0 / vocab_;
    const double base = std::max(cont_uni_[w] - d_, 0.0) / cont_uni_total_;
    return base + d_ * cont_uni_types_ / cont_uni_total_ / vocab_;
}

double KneserNeyLM::bigram(int v, int w) const {
    auto total = cont_bi_ctx_total_.find(v);
    if (total == cont_bi_ctx_total_.end()) return unigram(w);
    auto it = cont_bi_.find({v, w});
    const double n = it == cont_bi_.end() ? 0.0 : it->second;
    const double denom = total->second;
    return std::max(n - d_, 0.0) / denom + d_ * cont_bi_ctx_types_.at(v) / denom * unigram(w);
}

double KneserNeyLM::prob(int u, int v, int w) const {
    check_token(u, vocab_);
    check_token(v, vocab_);
    check_token(w, vocab_);
    auto total = tri_ctx_total_.find({u, v});
    if (total == tri_ctx_total_.end()) return bigram(v, w);
    auto it = tri_.find({u, v, w});
    const double c = it == tri_.end() ? 0.0 : it->second;
    const double denom = total->second;
    return std::max(c - d_, 0.0) / denom + d_ * tri_ctx_types_.at({u, v}) / denom * bigram(v, w);
}

OracleKind parse_oracle_kind(std::string_view s) {
    if (s == "kn3" || s == "kneser-ney") return OracleKind::KN_TRIGRAM;
    if (s == "bigram") return OracleKind::BIGRAM;
    if (s == "uniform") return OracleKind::UNIFORM;
    throw ConfigError("unknown reference model: " + std::string(s));
}

std::unique_ptr<ReferenceLM> make_oracle(OracleKind kind, const std::vector<Tokens>& train, int vocab) {
    switch (kind) {
        case OracleKind::KN_TRIGRAM: return std::make_unique<KneserNeyLM>(train, vocab);
        case OracleKind::BIGRAM: return std::make_unique<BigramLM>(train, vocab);
        case OracleKind::UNIFORM: return std::make_unique<UniformLM>(vocab);
    }
    throw ConfigError("unknown reference model");
}

Perplexity oracle_ppl(const std::vector<Tokens>& samples, const ReferenceLM& oracle) {
    if (samples.empty()) throw InputError("oracle_ppl: no samples");
    std::vector<double> nll;
    std::vector<double> count;
    double total_nll = 0.0;
    std::size_t total = 0;
    for (const Tokens& raw : samples) {
        const Tokens s = strip_pad(raw);
        double acc = 0.0;
        for (std::size_t i = 1; i < s.size(); ++i) {
            const int u = i >= 2 ? s[i - 2] : Vocabulary::kStart;
            acc -= std::log(oracle.prob(u, s[i - 1], s[i]));
        }
        const double n = s.size() > 1 ? static_cast<double>(s.size() - 1) : 0.0;
        nll.push_back(acc);
        count.push_back(n);
        total_nll += acc;
        total += static_cast<std::size_t>(n);
    }
    if (total == 0) throw InputError("oracle_ppl: samples have no scorable tokens");
    Perplexity out;
    out.tokens = total;
    const double mean = total_nll / static_cast<double>(total);
    out.ppl = std::exp(mean);
    const std::size_t m = samples.size();
    if (m > 1) {
        // ratio estimator: sum(nll) / sum(count)
        const double cbar = static_cast<double>(total) / static_cast<double>(m);
        double ss = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double r = nll[i] - mean * count[i];
            ss += r * r;
        }
        const double se_mean = std::sqrt(ss / static_cast<double>(m - 1) / static_cast<double>(m)) / cbar;
        out.se = out.ppl * se_mean;
    }
    return out;
}

namespace {

template <std::size_t N>
void collect_ngrams(const std::vector<Tokens>& seqs, std::vector<std::array<int, N>>& out) {
    for (const Tokens& raw : seqs) {
        const Tokens s = strip_pad(raw);
        for (std::size_t i = 0; i + N <= s.size(); ++i) {
            std::array<int, N> g;
            std::copy_n(s.begin() + static_cast<std::ptrdiff_t>(i), N, g.begin());
            out.push_back(g);
        }
    }
}

template <std::size_t N>
double distinct_fraction(const std::vector<Tokens>& samples) {
    std::vector<std::array<int, N>> grams;
    collect_ngrams<N>(samples, grams);
    if (grams.empty()) return 1.0;
    std::set<std::array<int, N>> unique(grams.begin(), grams.end());
    return static_cast<double>(unique.size()) / static_cast<double>(grams.size());
}

}  // namespace

double diversity(const std::vector<Tokens>& samples) {
    if (samples.size() < 2) throw InputError("diversity: need at least two samples");
    bool any = false;
    for (const Tokens& s : samples) any = any || strip_pad(s).size() >= 4;
    if (!any) throw InputError("diversity: every sample is shorter than four tokens");
    return distinct_fraction<2>(samples) * distinct_fraction<3>(samples) * distinct_fraction<4>(samples);
}

double memorization(const std::vector<Tokens>& samples, const std::vector<Tokens>& train) {
    std::vector<std::array<int, 4>> train_grams, sample_grams;
    collect_ngrams<4>(train, train_grams);
    collect_ngrams<4>(samples, sample_grams);
    if (sample_grams.empty()) return 0.0;
    std::set<std::array<int, 4>> index(train_grams.begin(), train_grams.end());
    std::size_t hit = 0;
    for (const auto& g : sample_grams) hit += index.count(g);
    return static_cast<double>(hit) / static_cast<double>(sample_grams.size());
}

std::vector<CosineBucket> cosine_time_diagnostic(const std::function<ad::Matrix(double)>& mu_bar) {
    std::vector<CosineBucket> out;
    ad::Matrix prev = mu_bar(0.1);
    for (int k = 1; k <= 9; ++k) {
        const double t = k / 10.0;
        ad::Matrix next = mu_bar((k + 1) / 10.0);
        if (next.rows() != prev.rows() || next.cols() != prev.cols()) throw ShapeError("cosine diagnostic: shape change");
        const auto n = prev.rows();
        std::vector<double> cos(static_cast<std::size_t>(n));
        for (Eigen::Index r = 0; r < n; ++r) {
            const double denom = prev.row(r).norm() * next.row(r).norm();
            cos[static_cast<std::size_t>(r)] = denom > 0.0 ? prev.row(r).dot(next.row(r)) / denom : 0.0;
        }
        CosineBucket b;
        b.t = t;
        for (double c : cos) b.mean += c / static_cast<double>(n);
        if (n > 1) {
            double ss = 0.0;
            for (double c : cos) ss += (c - b.mean) * (c - b.mean);
            b.sd = std::sqrt(ss / static_cast<double>(n - 1));
        }
        out.push_back(b);
        prev = std::move(next);
    }
    return out;
}

std::vector<CosineBucket> cosine_time_diagnostic(const ForwardProcess& process, const ad::Matrix& x) {
    if (process.kind() != ProcessKind::NFDM) throw UnsupportedPolicy("cosine diagnostic needs the NFDM process");
    return cosine_time_diagnostic([&](double t) { return process.nfdm_outputs(x, t).first; });
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash) {
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::vector<Tokens> generate(const Model& model, const SamplerConfig& cfg, int count,
                             const std::vector<Tokens>* context_pool) {
    if (count < 1) throw InputError("generate: count must be positive");
    ad::Matrix ctx;
    if (model.uses_context()) {
        if (context_pool == nullptr || context_pool->empty()) throw InputError("generate: context pool required");
        Rng pick(mix_seed(cfg.seed, 0xC0DE));
        std::vector<int> ids;
        for (int i = 0; i < count; ++i) {
            const Tokens& s = (*context_pool)[pick.below(context_pool->size())];
            if (static_cast<int>(s.size()) != model.spec().seq_len) throw ShapeError("generate: context length mismatch");
            ids.insert(ids.end(), s.begin(), s.end());
        }
        ctx = model.context_matrix(ids);
    }
    SamplingProblem p = model_problem(model, count, ctx.size() > 0 ? &ctx : nullptr);
    Trajectory tr = sample(p, cfg);
    return split_sequences(tr.ids, model.spec().seq_len);
}

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double se_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

std::string sampler_key(const SamplerConfig& c) {
    std::ostringstream os;
    os << to_string(c.method) << '|' << c.steps << '|' << to_string(c.mix) << '|' << std::setprecision(17) << c.tau;
    return os.str();
}

}  // namespace

std::vector<AblationRow> ablation_run(const AblationInputs& in, const std::vector<SamplerConfig>& grid) {
    if (in.model == nullptr || in.oracle == nullptr || in.train == nullptr) throw InputError("ablation: missing inputs");
    if (in.seeds.empty()) throw InputError("ablation: no seeds");
    std::vector<AblationRow> rows;
    for (const SamplerConfig& base : grid) {
        std::vector<Tokens> all;
        std::vector<double> div, mem;
        std::uint64_t hash = fnv1a(in.checkpoint_digest);
        hash = fnv1a(sampler_key(base), hash);
        for (std::uint64_t seed : in.seeds) {
            SamplerConfig cfg = base;
            cfg.seed = seed;
            hash = fnv1a(std::to_string(seed) + ";", hash);
            std::vector<Tokens> samples = generate(*in.model, cfg, in.samples_per_seed, in.context_pool);
            div.push_back(samples.size() >= 2 ? diversity(samples) : 0.0);
            mem.push_back(memorization(samples, *in.train));
            all.insert(all.end(), samples.begin(), samples.end());
        }
        AblationRow row;
        row.sampler = base;
        row.seed_count = in.seeds.size();
        Perplexity ppl = oracle_ppl(all, *in.oracle);
        row.metrics.oracle_ppl = ppl.ppl;
        row.metrics.oracle_ppl_se = ppl.se;
        row.metrics.diversity = mean_of(div);
        row.metrics.diversity_se = se_of(div);
        row.metrics.memorization = mean_of(mem);
        row.metrics.memorization_se = se_of(mem);
        row.metrics.bpc = in.bpc;
        row.metrics.bpc_se = in.bpc_se;
        row.metrics.fingerprint = hex64(hash);
        rows.push_back(row);
    }
    return rows;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
    os << "method,T,v_or_tau,ppl,ppl_se,diversity,memorization,bpc,seed_count\n";
    os << std::setprecision(10);
    for (const AblationRow& r : rows) {
        os << to_string(r.sampler.method) << ',' << r.sampler.steps << ',';
        switch (r.sampler.method) {
            case SamplerMethod::MARKOV_CHAIN: os << to_string(r.sampler.mix); break;
            case SamplerMethod::SDE: os << r.sampler.tau; break;
            case SamplerMethod::ODE: os << 0; break;
            case SamplerMethod::STAR_DDIM: os << "reuse"; break;
        }
        os << ',' << r.metrics.oracle_ppl << ',' << r.metrics.oracle_ppl_se << ',' << r.metrics.diversity << ','
           << r.metrics.memorization << ',' << r.metrics.bpc << ',' << r.seed_count << '\n';
    }
}

}  // namespace flowlm
