// SPDX-License-Identifier: Apache-2.0
//
// flowlm command-line tool: train, sample, eval, plot, ablate, gen-corpus.
// Exit codes: 0 ok, 2 usage or configuration error, 3 numerical failure.
#include "flowlm/checkpoint.hpp"
#include "flowlm/config.hpp"
#include "flowlm/corpus.hpp"
#include "flowlm/errors.hpp"
#include "flowlm/evalsuite.hpp"
#include "flowlm/grammar.hpp"
#include "flowlm/rng.hpp"
#include "flowlm/runner.hpp"
#include "flowlm/sampler.hpp"
#include "flowlm/schedule.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using flowlm::ad::Matrix;
using Json = nlohmann::ordered_json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

class Clock {
public:
    explicit Clock(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        if (!enabled_) return 0.0;
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    bool enabled_;
    std::chrono::steady_clock::time_point start_;
};

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::trunc) {
    if (const fs::path parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::out | mode);
    if (!out) throw flowlm::InputError("cannot write " + path);
    return out;
}

// Writes to a file, or stdout when the path is empty or "-".
class Sink {
public:
    explicit Sink(const std::string& path) {
        if (!path.empty() && path != "-") file_ = open_out(path);
    }
    std::ostream& out() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

private:
    std::ofstream file_;
};

void emit(std::ostream& os, const Json& j) { os << j.dump() << '\n'; }

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw flowlm::FormatError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Json breakdown_json(const flowlm::LossBreakdown& b) {
    return Json{{"diff", b.diff_nats}, {"rec", b.rec_nats}, {"prior", b.prior_nats}};
}

Json report_json(const flowlm::BpcReport& r) {
    return Json{{"bpc", r.bpc},        {"se", r.se},
                {"mc_se", r.mc_se},    {"diff", r.diff_nats},
                {"rec", r.rec_nats},   {"prior", r.prior_nats},
                {"draws", r.draws},    {"sequences", r.sequences}};
}

Json sampler_json(const flowlm::SamplerConfig& c) {
    Json j{{"method", flowlm::to_string(c.method)}, {"steps", c.steps}};
    if (c.method == flowlm::SamplerMethod::MARKOV_CHAIN) j["noise_mix"] = flowlm::to_string(c.mix);
    if (c.method == flowlm::SamplerMethod::SDE) j["tau"] = c.tau;
    j["seed"] = c.seed;
    return j;
}

flowlm::Restored open_checkpoint(const std::string& path) { return flowlm::restore(flowlm::load_checkpoint(path)); }

std::vector<flowlm::Tokens> ids_of(const std::vector<flowlm::TokenSequence>& seqs) {
    std::vector<flowlm::Tokens> out;
    for (const auto& s : seqs) out.push_back(s.ids);
    return out;
}

std::vector<flowlm::TokenSequence> encode_file(const std::string& path, const flowlm::Vocabulary& vocab, int seq_len) {
    if (path.empty()) throw flowlm::ConfigError("no corpus path given");
    return flowlm::encode_all(flowlm::read_lines(path), vocab, seq_len);
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string resume;
    bool no_timing = false;
};

int cmd_train(const TrainArgs& a) {
    flowlm::TrainState state;
    flowlm::Vocabulary vocab(flowlm::TokenMode::CHAR, {"a"});
    flowlm::Dataset data;
    if (!a.resume.empty()) {
        flowlm::Restored r = open_checkpoint(a.resume);
        for (const auto& kv : a.overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw flowlm::ConfigError("--set expects key=value: " + kv);
            const std::string key = kv.substr(0, eq);
            if (key != "run.steps" && key.rfind("run.", 0) != 0) {
                throw flowlm::ConfigError("only run.* keys may change on resume: " + key);
            }
            flowlm::set_key(r.config, key, kv.substr(eq + 1));
        }
        flowlm::validate(r.config);
        vocab = r.vocab;
        data = flowlm::encode_dataset(r.config, vocab, flowlm::read_lines(r.config.train_path),
                                      flowlm::read_lines(r.config.test_path));
        state.config = r.config;
        state.model = std::move(r.model);
        state.adam = std::move(r.adam);
        state.step = r.step;
    } else {
        if (a.config.empty()) throw flowlm::ConfigError("train needs --config or --resume");
        flowlm::RunConfig cfg = flowlm::load_config(a.config);
        for (const auto& kv : a.overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw flowlm::ConfigError("--set expects key=value: " + kv);
            flowlm::set_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        flowlm::validate(cfg);
        auto [v, d] = flowlm::load_dataset(cfg);
        vocab = std::move(v);
        data = std::move(d);
        state = flowlm::fresh_state(cfg, vocab.size());
    }
    const flowlm::RunConfig& cfg = state.config;
    fs::create_directories(cfg.out_dir);
    const std::string metrics_path = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
    std::ofstream metrics = open_out(metrics_path, a.resume.empty() ? std::ios::trunc : std::ios::app);
    emit(metrics, Json{{"type", "header"},
                       {"command", "train"},
                       {"config", flowlm::to_ini(cfg)},
                       {"start_step", state.step},
                       {"vocab_size", vocab.size()},
                       {"parameters", state.model->params().scalar_count()},
                       {"train_sequences", data.train.size()},
                       {"test_sequences", data.test.size()}});
    Clock clock(!a.no_timing);
    auto on_record = [&](const flowlm::TrainRecord& rec, const flowlm::TrainState& st) {
        using Kind = flowlm::TrainRecord::Kind;
        if (rec.kind == Kind::LOG) {
            Json j{{"type", "train"}, {"step", rec.step}, {"loss", rec.loss}};
            j.update(breakdown_json(rec.batch));
            j["grad_norm"] = rec.grad_norm;
            j["lr"] = rec.lr;
            j["wall_time"] = clock.seconds();
            emit(metrics, j);
            std::cerr << "step " << rec.step << " loss " << rec.loss << '\n';
        } else if (rec.kind == Kind::EVAL) {
            Json j{{"type", "eval"}, {"step", rec.step}, {"mode", flowlm::to_string(flowlm::elbo_mode(cfg.kind))}};
            j.update(report_json(*rec.eval));
            j["wall_time"] = clock.seconds();
            emit(metrics, j);
            std::cerr << "step " << rec.step << " bpc " << rec.eval->bpc << " +- " << rec.eval->se << '\n';
        } else {
            const flowlm::Checkpoint ck = flowlm::capture(st.config, vocab, *st.model, *st.adam, st.step);
            const std::string path = (fs::path(cfg.out_dir) / ("ckpt_" + std::to_string(rec.step) + ".bin")).string();
            flowlm::save_checkpoint(path, ck);
            flowlm::save_checkpoint((fs::path(cfg.out_dir) / "last.bin").string(), ck);
            emit(metrics, Json{{"type", "checkpoint"}, {"step", rec.step}, {"path", path}});
        }
        metrics.flush();
    };
    try {
        flowlm::train(state, data, on_record);
    } catch (const flowlm::NumericalError& e) {
        std::ofstream dump = open_out((fs::path(cfg.out_dir) / "failure.json").string());
        dump << Json{{"error", e.what()}, {"step", state.step}, {"config", flowlm::to_ini(cfg)}}.dump(2) << '\n';
        emit(metrics, Json{{"type", "failure"}, {"step", state.step}, {"error", e.what()}});
        throw;
    }
    return 0;
}

// ---------------------------------------------------------------- sample

struct SampleArgs {
    std::string checkpoint;
    std::string method = "star";
    int steps = 200;
    std::string noise_mix = "star";
    double tau = 1.0;
    std::uint64_t seed = 0;
    int count = 16;
    int batch = 0;
    std::string out;
    std::string trajectory;
    std::string context_corpus;
    bool no_timing = false;
};

flowlm::SamplerConfig sampler_config(const std::string& method, int steps, const std::string& mix, double tau,
                                     std::uint64_t seed) {
    flowlm::SamplerConfig c;
    c.method = flowlm::parse_sampler_method(method);
    if (steps < 1) throw flowlm::ConfigError("--steps must be positive");
    c.steps = steps;
    c.mix = flowlm::parse_noise_mix(mix);
    if (!(tau >= 0.0)) throw flowlm::ConfigError("--tau must be non-negative");
    c.tau = tau;
    c.seed = seed;
    return c;
}

void write_trajectory(const std::string& path, const flowlm::Trajectory& tr) {
    std::ofstream out = open_out(path, std::ios::trunc | std::ios::binary);
    const Matrix& z = tr.latents.front();
    out << "flowlm-trajectory shape=[" << tr.latents.size() << ',' << z.rows() << ',' << z.cols()
        << "] dtype=float64 order=C times=[";
    out << std::setprecision(17);
    for (std::size_t i = 0; i < tr.times.size(); ++i) out << (i ? "," : "") << tr.times[i];
    out << "]\n";
    for (const Matrix& m : tr.latents) {
        out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
}

int cmd_sample(const SampleArgs& a) {
    flowlm::Restored r = open_checkpoint(a.checkpoint);
    const flowlm::Model& model = *r.model;
    flowlm::SamplerConfig base = sampler_config(a.method, a.steps, a.noise_mix, a.tau, a.seed);
    if (base.method == flowlm::SamplerMethod::MARKOV_CHAIN && base.mix.snr_star && !model.process().has_analytic_snr()) {
        throw flowlm::UnsupportedPolicy("snr-star noise mix needs an analytic-SNR process");
    }
    if (a.count < 1) throw flowlm::ConfigError("--count must be positive");
    const int batch = a.batch > 0 ? std::min(a.batch, a.count) : a.count;
    std::vector<flowlm::Tokens> pool;
    if (model.uses_context()) {
        pool = ids_of(encode_file(a.context_corpus.empty() ? r.config.train_path : a.context_corpus, r.vocab,
                                  r.config.seq_len));
    }
    Sink sink(a.out);
    const std::uint64_t ck_hash = flowlm::fnv1a(file_bytes(a.checkpoint));
    emit(sink.out(), Json{{"type", "header"},
                          {"command", "sample"},
                          {"config", flowlm::to_ini(r.config)},
                          {"checkpoint_step", r.step},
                          {"checkpoint_fingerprint", flowlm::hex64(ck_hash)},
                          {"sampler", sampler_json(base)},
                          {"count", a.count},
                          {"batch", batch}});
    int index = 0;
    for (int b = 0; index < a.count; ++b) {
        const int n = std::min(batch, a.count - index);
        flowlm::SamplerConfig cfg = base;
        cfg.seed = flowlm::mix_seed(a.seed, static_cast<std::uint64_t>(b));
        cfg.keep_latents = b == 0 && !a.trajectory.empty();
        Matrix ctx;
        if (model.uses_context()) {
            flowlm::Rng pick(flowlm::mix_seed(cfg.seed, 0xC0DE));
            std::vector<int> ids;
            for (int i = 0; i < n; ++i) {
                const auto& s = pool[pick.below(pool.size())];
                ids.insert(ids.end(), s.begin(), s.end());
            }
            ctx = model.context_matrix(ids);
        }
        const flowlm::SamplingProblem p = flowlm::model_problem(model, n, ctx.size() > 0 ? &ctx : nullptr);
        Clock clock(!a.no_timing);
        const flowlm::Trajectory tr = flowlm::sample(p, cfg);
        const double per_step = clock.seconds() / cfg.steps;
        if (cfg.keep_latents) write_trajectory(a.trajectory, tr);
        const auto seqs = flowlm::split_sequences(tr.ids, r.config.seq_len);
        for (const auto& ids : seqs) {
            emit(sink.out(), Json{{"type", "sample"},
                                  {"index", index++},
                                  {"batch_seed", cfg.seed},
                                  {"text", flowlm::detokenize(ids, r.vocab)},
                                  {"ids", ids},
                                  {"wall_time_per_step", per_step}});
        }
    }
    return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string checkpoint;
    std::string test;
    int draws = 16;
    std::uint64_t seed = 0;
    int sequences = 0;
    std::string samples;
    std::string oracle = "kn3";
    std::string out;
    bool grammar = false;
    bool no_timing = false;
};

std::vector<flowlm::Tokens> read_samples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw flowlm::InputError("cannot open samples file " + path);
    std::vector<flowlm::Tokens> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::exception& e) {
            throw flowlm::InputError(std::string("samples file: ") + e.what());
        }
        if (j.value("type", "") == "sample") out.push_back(j.at("ids").get<flowlm::Tokens>());
    }
    if (out.empty()) throw flowlm::InputError("samples file has no sample records: " + path);
    return out;
}

int cmd_eval(const EvalArgs& a) {
    flowlm::Restored r = open_checkpoint(a.checkpoint);
    if (a.draws < 1) throw flowlm::ConfigError("--draws must be positive");
    const std::string test_path = a.test.empty() ? r.config.test_path : a.test;
    auto test = encode_file(test_path, r.vocab, r.config.seq_len);
    if (test.empty()) throw flowlm::InputError("test corpus is empty: " + test_path);
    if (a.sequences > 0 && static_cast<std::size_t>(a.sequences) < test.size()) test.resize(static_cast<std::size_t>(a.sequences));
    Clock clock(!a.no_timing);
    const flowlm::BpcReport rep = flowlm::estimate_bpc(*r.model, test, a.draws, a.seed);
    Json j{{"type", "eval"},
           {"checkpoint_step", r.step},
           {"mode", flowlm::to_string(flowlm::elbo_mode(r.config.kind))},
           {"test", test_path}};
    j.update(report_json(rep));
    std::uint64_t hash = flowlm::fnv1a(file_bytes(a.checkpoint));
    hash = flowlm::fnv1a(test_path + "|" + std::to_string(a.draws) + "|" + std::to_string(a.seed), hash);
    if (!a.samples.empty()) {
        const auto samples = read_samples(a.samples);
        const auto train = ids_of(encode_file(r.config.train_path, r.vocab, r.config.seq_len));
        const auto oracle = flowlm::make_oracle(flowlm::parse_oracle_kind(a.oracle), train, r.vocab.size());
        const flowlm::Perplexity ppl = flowlm::oracle_ppl(samples, *oracle);
        j["samples"] = samples.size();
        j["oracle"] = a.oracle;
        j["oracle_ppl"] = ppl.ppl;
        j["oracle_ppl_se"] = ppl.se;
        j["diversity"] = samples.size() >= 2 ? flowlm::diversity(samples) : 0.0;
        j["memorization"] = flowlm::memorization(samples, train);
        if (a.grammar) {
            std::size_t ok = 0;
            for (const auto& s : samples) ok += flowlm::grammar::valid_sequence(s, r.vocab) ? 1 : 0;
            j["grammatical"] = static_cast<double>(ok) / static_cast<double>(samples.size());
        }
        hash = flowlm::fnv1a(file_bytes(a.samples), hash);
    }
    j["fingerprint"] = flowlm::hex64(hash);
    j["wall_time"] = clock.seconds();
    Sink sink(a.out);
    emit(sink.out(), Json{{"type", "header"}, {"command", "eval"}, {"config", flowlm::to_ini(r.config)}});
    emit(sink.out(), j);
    return 0;
}

// ---------------------------------------------------------------- plot

struct PlotArgs {
    std::string target;
    std::string checkpoint;
    std::string out_dir = "plots";
    int points = 1000;
};

int cmd_plot(const PlotArgs& a) {
    fs::create_directories(a.out_dir);
    auto path = [&](const std::string& name) { return (fs::path(a.out_dir) / name).string(); };
    if (a.points < 2) throw flowlm::ConfigError("--points must be at least 2");
    if (a.target == "dlm") {
        std::ofstream gamma = open_out(path("dlm_gamma.csv"));
        std::ofstream dgamma = open_out(path("dlm_dgamma.csv"));
        std::ofstream g2 = open_out(path("dlm_g2.csv"));
        gamma << "t,gamma\n" << std::setprecision(17);
        dgamma << "t,dgamma_dt\n" << std::setprecision(17);
        g2 << "t,g2\n" << std::setprecision(17);
        for (int i = 0; i < a.points; ++i) {
            const double t = static_cast<double>(i) / (a.points - 1);
            const flowlm::schedule::GammaPoint gp = flowlm::schedule::gamma_dlm(t);
            gamma << t << ',' << gp.gamma(0) << '\n';
            dgamma << t << ',' << gp.dgamma_dt(0) << '\n';
            g2 << t << ',' << flowlm::schedule::markovian_volatility(gp).g2(0) << '\n';
        }
        std::cout << "wrote " << path("dlm_gamma.csv") << ", " << path("dlm_dgamma.csv") << ", " << path("dlm_g2.csv")
                  << '\n';
        return 0;
    }
    if (a.target != "checkpoint") throw flowlm::ConfigError("unknown plot target: " + a.target + " (dlm, checkpoint)");
    if (a.checkpoint.empty()) throw flowlm::ConfigError("plot checkpoint needs --checkpoint");
    flowlm::Restored r = open_checkpoint(a.checkpoint);
    const int s = r.config.seq_len;
    auto train = encode_file(r.config.train_path, r.vocab, s);
    train.resize(std::min<std::size_t>(train.size(), 64));
    std::vector<int> ids;
    for (const auto& t : train) ids.insert(ids.end(), t.ids.begin(), t.ids.end());
    Matrix x = r.model->embedding().table().value(ids, Eigen::all);
    if (r.config.kind == flowlm::ProcessKind::NFDM) {
        std::ofstream out = open_out(path("cosine.csv"));
        out << "t,t_next,mean,sd\n" << std::setprecision(17);
        for (const auto& b : flowlm::cosine_time_diagnostic(r.model->process(), x)) {
            out << b.t << ',' << b.t + 0.1 << ',' << b.mean << ',' << b.sd << '\n';
        }
        std::cout << "wrote " << path("cosine.csv") << '\n';
    } else {
        const Matrix ctx = r.model->context_matrix(ids);
        std::ofstream out = open_out(path("gamma.csv"));
        out << "t,gamma_mean,gamma_min,gamma_max\n" << std::setprecision(17);
        for (int i = 0; i < a.points; ++i) {
            const double t = static_cast<double>(i) / (a.points - 1);
            const Matrix g = r.model->process().gamma(x, t, ctx.size() > 0 ? &ctx : nullptr);
            out << t << ',' << g.mean() << ',' << g.minCoeff() << ',' << g.maxCoeff() << '\n';
        }
        std::cout << "wrote " << path("gamma.csv") << '\n';
    }
    return 0;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
    std::string checkpoint;
    std::vector<std::string> methods{"chain"};
    std::vector<int> steps{64, 32};
    std::vector<std::string> mixes{"1", "0.8", "0.5"};
    std::vector<double> taus{1.0};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    int per_seed = 16;
    int draws = 4;
    std::string oracle = "kn3";
    std::string out;
};

int cmd_ablate(const AblateArgs& a) {
    flowlm::Restored r = open_checkpoint(a.checkpoint);
    std::vector<flowlm::SamplerConfig> grid;
    for (const auto& m : a.methods) {
        for (int t : a.steps) {
            const auto method = flowlm::parse_sampler_method(m);
            if (method == flowlm::SamplerMethod::MARKOV_CHAIN) {
                for (const auto& v : a.mixes) grid.push_back(sampler_config(m, t, v, 1.0, 0));
            } else if (method == flowlm::SamplerMethod::SDE) {
                for (double tau : a.taus) grid.push_back(sampler_config(m, t, "star", tau, 0));
            } else {
                grid.push_back(sampler_config(m, t, "star", 1.0, 0));
            }
        }
    }
    for (const auto& c : grid) {
        if (c.method == flowlm::SamplerMethod::MARKOV_CHAIN && c.mix.snr_star && !r.model->process().has_analytic_snr()) {
            throw flowlm::UnsupportedPolicy("snr-star noise mix needs an analytic-SNR process");
        }
    }
    const auto train = ids_of(encode_file(r.config.train_path, r.vocab, r.config.seq_len));
    const auto oracle = flowlm::make_oracle(flowlm::parse_oracle_kind(a.oracle), train, r.vocab.size());
    flowlm::AblationInputs in;
    in.model = r.model.get();
    in.oracle = oracle.get();
    in.train = &train;
    in.context_pool = &train;
    in.seeds = a.seeds;
    in.samples_per_seed = a.per_seed;
    in.checkpoint_digest = flowlm::hex64(flowlm::fnv1a(file_bytes(a.checkpoint)));
    if (a.draws > 0) {
        const auto test = flowlm::eval_subset(r.config, encode_file(r.config.test_path, r.vocab, r.config.seq_len));
        const flowlm::BpcReport rep = flowlm::estimate_bpc(*r.model, test, a.draws, 0);
        in.bpc = rep.bpc;
        in.bpc_se = rep.se;
    }
    const auto rows = flowlm::ablation_run(in, grid);
    Sink sink(a.out);
    flowlm::write_ablation_csv(sink.out(), rows);
    return 0;
}

// ---------------------------------------------------------------- gen-corpus

struct CorpusArgs {
    std::string train_out = "data/grammar_train.txt";
    std::string test_out = "data/grammar_test.txt";
    std::size_t train_count = 2000;
    std::size_t test_count = 200;
    std::uint64_t seed = 1;
};

int cmd_gen_corpus(const CorpusArgs& a) {
    auto write = [](const std::string& path, const std::vector<std::string>& lines) {
        std::ofstream out = open_out(path);
        for (const auto& l : lines) out << l << '\n';
    };
    const auto train = flowlm::grammar::generate(a.train_count, a.seed);
    write(a.train_out, train);
    write(a.test_out, flowlm::grammar::generate(a.test_count, a.seed + 1));
    std::cout << "unigram_bits_per_char " << std::setprecision(10) << flowlm::grammar::unigram_bits_per_char(train)
              << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flowlm: latent diffusion language models with learned forward processes"};
    app.require_subcommand(1);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train a model from an INI config; writes metrics.jsonl and checkpoints");
    t->add_option("-c,--config", train.config, "INI configuration file");
    t->add_option("--set", train.overrides, "Override a config key, e.g. --set run.steps=500");
    t->add_option("--resume", train.resume, "Continue from a checkpoint (run.* keys may be overridden)");
    t->add_flag("--no-timing", train.no_timing, "Write 0 for wall-time fields");

    SampleArgs sample;
    auto* s = app.add_subcommand("sample", "Generate sequences from a checkpoint as JSON lines");
    s->add_option("--checkpoint", sample.checkpoint, "Checkpoint file")->required();
    s->add_option("--method", sample.method, "star | chain | sde | ode")->capture_default_str();
    s->add_option("--steps", sample.steps, "Number of sampling steps T")->capture_default_str();
    s->add_option("--noise-mix", sample.noise_mix, "Chain noise mix: number in [0,1], star (=1) or snr-star")
        ->capture_default_str();
    s->add_option("--tau", sample.tau, "SDE volatility scale")->capture_default_str();
    s->add_option("--seed", sample.seed, "Sampling seed")->capture_default_str();
    s->add_option("--count", sample.count, "Number of sequences")->capture_default_str();
    s->add_option("--batch", sample.batch, "Sequences per sampler batch (default: all)");
    s->add_option("-o,--out", sample.out, "Output file (default stdout)");
    s->add_option("--trajectory", sample.trajectory, "Dump the first batch's latents to this binary file");
    s->add_option("--context-corpus", sample.context_corpus, "Corpus for sampling-time context (default data.train)");
    s->add_flag("--no-timing", sample.no_timing, "Write 0 for wall-time fields");

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "ELBO bits per character and optional sample metrics");
    e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
    e->add_option("--test", eval.test, "Test corpus (default data.test)");
    e->add_option("--draws", eval.draws, "Time draws per sequence K")->capture_default_str();
    e->add_option("--seed", eval.seed, "Evaluation seed")->capture_default_str();
    e->add_option("--sequences", eval.sequences, "Use only the first N test sequences");
    e->add_option("--samples", eval.samples, "Samples JSONL to score");
    e->add_option("--oracle", eval.oracle, "Reference LM: kn3 | bigram | uniform")->capture_default_str();
    e->add_flag("--grammar", eval.grammar, "Report the fraction of samples valid under the synthetic grammar");
    e->add_option("-o,--out", eval.out, "Output file (default stdout)");
    e->add_flag("--no-timing", eval.no_timing, "Write 0 for wall-time fields");

    PlotArgs plot;
    auto* p = app.add_subcommand("plot", "Write plot CSVs: dlm schedule curves or checkpoint diagnostics");
    p->add_option("target", plot.target, "dlm | checkpoint")->required();
    p->add_option("--checkpoint", plot.checkpoint, "Checkpoint for the checkpoint target");
    p->add_option("--out-dir", plot.out_dir, "Output directory")->capture_default_str();
    p->add_option("--points", plot.points, "Grid points")->capture_default_str();

    AblateArgs ablate;
    auto* ab = app.add_subcommand("ablate", "Sampler ablation grid as CSV");
    ab->add_option("--checkpoint", ablate.checkpoint, "Checkpoint file")->required();
    ab->add_option("--methods", ablate.methods, "Sampling methods")->capture_default_str();
    ab->add_option("--steps", ablate.steps, "Step counts")->capture_default_str();
    ab->add_option("--noise-mix", ablate.mixes, "Chain noise mixes")->capture_default_str();
    ab->add_option("--tau", ablate.taus, "SDE volatility scales")->capture_default_str();
    ab->add_option("--seeds", ablate.seeds, "Sampling seeds")->capture_default_str();
    ab->add_option("--samples-per-seed", ablate.per_seed, "Samples per seed")->capture_default_str();
    ab->add_option("--draws", ablate.draws, "Time draws for the bpc column (0 skips)")->capture_default_str();
    ab->add_option("--oracle", ablate.oracle, "Reference LM: kn3 | bigram | uniform")->capture_default_str();
    ab->add_option("-o,--out", ablate.out, "Output CSV (default stdout)");

    CorpusArgs corpus;
    auto* g = app.add_subcommand("gen-corpus", "Write the synthetic five-symbol grammar corpus");
    g->add_option("--train-out", corpus.train_out, "Training split path")->capture_default_str();
    g->add_option("--test-out", corpus.test_out, "Test split path")->capture_default_str();
    g->add_option("--train-count", corpus.train_count, "Training sentences")->capture_default_str();
    g->add_option("--test-count", corpus.test_count, "Test sentences")->capture_default_str();
    g->add_option("--seed", corpus.seed, "Generator seed (test split uses seed + 1)")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::CallForAllHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return kExitConfig;
    }

    try {
        if (*t) return cmd_train(train);
        if (*s) return cmd_sample(sample);
        if (*e) return cmd_eval(eval);
        if (*p) return cmd_plot(plot);
        if (*ab) return cmd_ablate(ablate);
        if (*g) return cmd_gen_corpus(corpus);
    } catch (const flowlm::NumericalError& err) {
        std::cerr << "numerical failure: " << err.what() << '\n';
        return kExitNumerical;
    } catch (const flowlm::DegenerateError& err) {
        std::cerr << "numerical failure: " << err.what() << '\n';
        return kExitNumerical;
    } catch (const flowlm::ScheduleError& err) {
        std::cerr << "numerical failure: " << err.what() << '\n';
        return kExitNumerical;
    } catch (const std::invalid_argument& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitConfig;
    } catch (const flowlm::FormatError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitConfig;
    } catch (const fs::filesystem_error& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitConfig;
    }
    return 0;
}
