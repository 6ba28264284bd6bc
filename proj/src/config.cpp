// SPDX-License-Identifier: Apache-2.0
#include "flowlm/config.hpp"

#include "flowlm/errors.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

namespace flowlm {

namespace pt = boost::property_tree;

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    std::istringstream is(v);
    T out{};
    is >> out;
    if (is.fail() || !is.eof()) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

// One binding per key: reads into and writes out of a RunConfig.
struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number(T RunConfig::* m, const std::string& key) {
    return {[m, key](RunConfig& c, const std::string& v) { c.*m = parse_number<T>(key, v); },
            [m](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<T>) {
                    return fmt(c.*m);
                } else {
                    return std::to_string(c.*m);
                }
            }};
}

template <typename T>
Field optim_number(T OptimConfig::* m, const std::string& key) {
    return {[m, key](RunConfig& c, const std::string& v) { c.optim.*m = parse_number<T>(key, v); },
            [m](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<T>) {
                    return fmt(c.optim.*m);
                } else {
                    return std::to_string(c.optim.*m);
                }
            }};
}

Field boolean(bool RunConfig::* m, const std::string& key) {
    return {[m, key](RunConfig& c, const std::string& v) { c.*m = parse_bool(key, v); },
            [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

Field text(std::string RunConfig::* m) {
    return {[m](RunConfig& c, const std::string& v) { c.*m = v; }, [m](const RunConfig& c) { return c.*m; }};
}

template <typename E, typename P>
Field choice(E RunConfig::* m, P parse) {
    return {[m, parse](RunConfig& c, const std::string& v) {
                try {
                    c.*m = parse(v);
                } catch (const std::invalid_argument& e) {
                    throw ConfigError(e.what());
                }
            },
            [m](const RunConfig& c) { return to_string(c.*m); }};
}

using Schema = std::vector<std::pair<std::string, Field>>;

const Schema& schema() {
    static const Schema s = {
        {"run.seed", number(&RunConfig::seed, "run.seed")},
        {"run.steps", number(&RunConfig::steps, "run.steps")},
        {"run.batch_size", number(&RunConfig::batch_size, "run.batch_size")},
        {"run.log_every", number(&RunConfig::log_every, "run.log_every")},
        {"run.eval_every", number(&RunConfig::eval_every, "run.eval_every")},
        {"run.checkpoint_every", number(&RunConfig::checkpoint_every, "run.checkpoint_every")},
        {"run.out_dir", text(&RunConfig::out_dir)},
        {"data.train", text(&RunConfig::train_path)},
        {"data.test", text(&RunConfig::test_path)},
        {"data.token_mode", choice(&RunConfig::token_mode, parse_token_mode)},
        {"data.max_vocab", number(&RunConfig::max_vocab, "data.max_vocab")},
        {"data.seq_len", number(&RunConfig::seq_len, "data.seq_len")},
        {"data.eval_draws", number(&RunConfig::eval_draws, "data.eval_draws")},
        {"data.eval_sequences", number(&RunConfig::eval_sequences, "data.eval_sequences")},
        {"model.kind", choice(&RunConfig::kind, parse_process_kind)},
        {"model.hidden", number(&RunConfig::hidden, "model.hidden")},
        {"model.embedding_init_sd", number(&RunConfig::embedding_init_sd, "model.embedding_init_sd")},
        {"model.predictor_width", number(&RunConfig::predictor_width, "model.predictor_width")},
        {"model.predictor_layers", number(&RunConfig::predictor_layers, "model.predictor_layers")},
        {"model.predictor_heads", number(&RunConfig::predictor_heads, "model.predictor_heads")},
        {"model.predictor_conditioning", choice(&RunConfig::predictor_conditioning, nn::parse_time_conditioning)},
        {"model.fourier_freqs", number(&RunConfig::fourier_freqs, "model.fourier_freqs")},
        {"model.fourier_lo", number(&RunConfig::fourier_lo, "model.fourier_lo")},
        {"model.fourier_hi", number(&RunConfig::fourier_hi, "model.fourier_hi")},
        {"model.mixture_head", boolean(&RunConfig::mixture_head, "model.mixture_head")},
        {"model.likelihood_logits", boolean(&RunConfig::likelihood_logits, "model.likelihood_logits")},
        {"model.dropout", number(&RunConfig::dropout, "model.dropout")},
        {"model.context_width", number(&RunConfig::context_width, "model.context_width")},
        {"model.context_heads", number(&RunConfig::context_heads, "model.context_heads")},
        {"process.delta", number(&RunConfig::delta, "process.delta")},
        {"process.eta", number(&RunConfig::eta, "process.eta")},
        {"process.gamma_min", number(&RunConfig::gamma_min, "process.gamma_min")},
        {"process.gamma_max", number(&RunConfig::gamma_max, "process.gamma_max")},
        {"process.gamma_degree", number(&RunConfig::gamma_degree, "process.gamma_degree")},
        {"process.gamma_context", boolean(&RunConfig::gamma_context, "process.gamma_context")},
        {"process.gamma_context_width", number(&RunConfig::gamma_context_width, "process.gamma_context_width")},
        {"process.fixed_average_snr", boolean(&RunConfig::fixed_average_snr, "process.fixed_average_snr")},
        {"process.nfdm_width", number(&RunConfig::nfdm_width, "process.nfdm_width")},
        {"process.nfdm_layers", number(&RunConfig::nfdm_layers, "process.nfdm_layers")},
        {"process.nfdm_heads", number(&RunConfig::nfdm_heads, "process.nfdm_heads")},
        {"process.nfdm_conditioning", choice(&RunConfig::nfdm_conditioning, nn::parse_time_conditioning)},
        {"process.volatility_width", number(&RunConfig::volatility_width, "process.volatility_width")},
        {"process.log_sigma_bar_init", number(&RunConfig::log_sigma_bar_init, "process.log_sigma_bar_init")},
        {"optim.loss", choice(&RunConfig::loss, parse_loss_mode)},
        {"optim.lr", optim_number(&OptimConfig::lr, "optim.lr")},
        {"optim.lr_decay", boolean(&RunConfig::lr_decay, "optim.lr_decay")},
        {"optim.final_lr_fraction", optim_number(&OptimConfig::final_lr_fraction, "optim.final_lr_fraction")},
        {"optim.warmup_steps", optim_number(&OptimConfig::warmup_steps, "optim.warmup_steps")},
        {"optim.beta1", optim_number(&OptimConfig::beta1, "optim.beta1")},
        {"optim.beta2", optim_number(&OptimConfig::beta2, "optim.beta2")},
        {"optim.eps", optim_number(&OptimConfig::eps, "optim.eps")},
        {"optim.clip_norm", optim_number(&OptimConfig::clip_norm, "optim.clip_norm")},
        {"optim.clip_after", optim_number(&OptimConfig::clip_after, "optim.clip_after")},
    };
    return s;
}

}  // namespace

ModelSpec RunConfig::model_spec(int vocab_size) const {
    ModelSpec s;
    s.vocab = vocab_size;
    s.hidden = hidden;
    s.seq_len = seq_len;
    s.embedding_init_sd = embedding_init_sd;
    const nn::FourierTime fourier{fourier_freqs, fourier_lo, fourier_hi};
    s.predictor.width = predictor_width;
    s.predictor.layers = predictor_layers;
    s.predictor.heads = predictor_heads;
    s.predictor.conditioning = predictor_conditioning;
    s.predictor.fourier = fourier;
    s.predictor.mixture_head = mixture_head;
    s.predictor.likelihood_logits = likelihood_logits;
    s.process.kind = kind;
    s.process.delta = delta;
    s.process.eta = eta;
    s.process.gamma.gamma_min = gamma_min;
    s.process.gamma.gamma_max = gamma_max;
    s.process.gamma.degree = gamma_degree;
    s.process.gamma.use_context = gamma_context;
    s.process.gamma.context_width = gamma_context_width;
    s.process.fixed_average_snr = fixed_average_snr;
    s.process.nfdm_width = nfdm_width;
    s.process.nfdm_layers = nfdm_layers;
    s.process.nfdm_heads = nfdm_heads;
    s.process.nfdm_conditioning = nfdm_conditioning;
    s.process.fourier = fourier;
    s.process.volatility_width = volatility_width;
    s.process.log_sigma_bar_init = log_sigma_bar_init;
    s.context.width = context_width;
    s.context.heads = context_heads;
    return s;
}

OptimConfig RunConfig::optim_config() const {
    OptimConfig o = optim;
    o.total_steps = lr_decay ? steps : 0;
    return o;
}

void validate(const RunConfig& c) {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    require(c.steps >= 1, "run.steps must be positive");
    require(c.batch_size >= 1, "run.batch_size must be positive");
    require(c.seq_len >= 3, "data.seq_len must be at least 3");
    require(c.max_vocab >= 5, "data.max_vocab must be at least 5");
    require(c.eval_draws >= 1, "data.eval_draws must be positive");
    require(c.eval_sequences >= 0, "data.eval_sequences must be non-negative");
    require(c.hidden >= 1, "model.hidden must be positive");
    require(c.embedding_init_sd > 0.0, "model.embedding_init_sd must be positive");
    require(c.predictor_width >= 1 && c.predictor_layers >= 1 && c.predictor_heads >= 1, "predictor sizes must be positive");
    require(c.predictor_width % c.predictor_heads == 0, "model.predictor_width must be divisible by predictor_heads");
    require(c.nfdm_width % c.nfdm_heads == 0, "process.nfdm_width must be divisible by nfdm_heads");
    require(c.context_width % c.context_heads == 0, "model.context_width must be divisible by context_heads");
    require(c.fourier_freqs >= 1 && c.fourier_hi > c.fourier_lo && c.fourier_lo > 0.0, "bad Fourier range");
    require(c.dropout == 0.0, "model.dropout: only 0 is supported");
    require(c.delta > 0.0 && c.delta < 1.0, "process.delta must lie in (0, 1)");
    require(c.eta > 0.0, "process.eta must be positive");
    require(c.gamma_max > c.gamma_min, "process.gamma_max must exceed gamma_min");
    require(c.gamma_degree >= 1, "process.gamma_degree must be positive");
    require(c.optim.lr >= 0.0, "optim.lr must be non-negative");
    require(c.optim.clip_norm > 0.0, "optim.clip_norm must be positive");
    require(c.optim.final_lr_fraction >= 0.0 && c.optim.final_lr_fraction <= 1.0,
            "optim.final_lr_fraction must lie in [0, 1]");
    check_compatibility(c.model_spec(c.max_vocab).process, c.loss);
}

RunConfig parse_config(std::istream& in) {
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    std::map<std::string, const Field*> index;
    for (const auto& [key, field] : schema()) index[key] = &field;
    RunConfig cfg;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) throw ConfigError("config: key outside a section: " + section);
        for (const auto& [key, value] : body) {
            const std::string full = section + "." + key;
            auto it = index.find(full);
            if (it == index.end()) throw ConfigError("config: unknown key " + full);
            it->second->set(cfg, value.data());
        }
    }
    validate(cfg);
    return cfg;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& [name, field] : schema()) {
        if (name == key) {
            field.set(cfg, value);
            return;
        }
    }
    throw ConfigError("config: unknown key " + key);
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse_config(in);
}

std::string to_ini(const RunConfig& cfg) {
    pt::ptree tree;
    for (const auto& [key, field] : schema()) tree.put(pt::ptree::path_type(key, '.'), field.get(cfg));
    std::ostringstream os;
    pt::write_ini(os, tree);
    return os.str();
}

}  // namespace flowlm
