// SPDX-License-Identifier: Apache-2.0
#include "flowlm/objectives.hpp"

#include "flowlm/errors.hpp"
#include "flowlm/schedule.hpp"

#include <cmath>
#include <numbers>

namespace flowlm {

using ad::Matrix;
using ad::Tape;
using ad::Var;

LossMode parse_loss_mode(std::string_view s) {
    if (s == "nfdm_full" || s == "full") return LossMode::NFDM_FULL;
    if (s == "mulan_simplified" || s == "simplified") return LossMode::MULAN_SIMPLIFIED;
    if (s == "rescaled_xpred" || s == "rescaled") return LossMode::RESCALED_XPRED;
    throw ConfigError("unknown loss mode '" + std::string(s) + "' (expected nfdm_full, mulan_simplified or rescaled_xpred)");
}

std::string to_string(LossMode m) {
    switch (m) {
        case LossMode::NFDM_FULL: return "nfdm_full";
        case LossMode::MULAN_SIMPLIFIED: return "mulan_simplified";
        case LossMode::RESCALED_XPRED: return "rescaled_xpred";
    }
    return "?";
}

void check_compatibility(const ProcessSpec& process, LossMode mode) {
    if (mode == LossMode::MULAN_SIMPLIFIED && process.kind == ProcessKind::NFDM) {
        throw ConfigError("loss mulan_simplified needs an analytic-SNR process (static or mulan)");
    }
    if (mode == LossMode::MULAN_SIMPLIFIED && process.eta != 1.0) {
        throw ConfigError("loss mulan_simplified assumes the Markovian volatility (eta = 1)");
    }
    if (mode == LossMode::RESCALED_XPRED) {
        const bool ok = process.kind == ProcessKind::STATIC_DLM ||
                        (process.kind == ProcessKind::MULAN && process.fixed_average_snr);
        if (!ok) {
            throw ConfigError("loss rescaled_xpred collapses with a free SNR; use static or mulan with fixed_average_snr");
        }
    }
}

namespace {

// [B*S x C] -> [B x 1] per-sequence total.
Var seq_total(const Var& v, int seq_len) {
    return ad::scale(ad::seq_mean_rows(ad::row_sum(v), seq_len), static_cast<double>(seq_len));
}

Matrix normal_rows(Rng& rng, int rows, int cols) { return rng.normal_matrix(rows, cols); }

Var nfdm_from_jets(const Jet& jx, const Jet& jhat, const Var& z, int seq_len) {
    if (jx.g2.value().minCoeff() < 1e-12) throw ScheduleError("volatility g^2 underflow at a sampled time");
    Var delta = ad::sub(backward_drift(jx, z), backward_drift(jhat, z));
    return seq_total(ad::scale(ad::div(ad::square(delta), jx.g2), 0.5), seq_len);
}

}  // namespace

Draws uniform_draws(Rng& rng, int batch, int seq_len, int hidden) {
    Draws d;
    for (int b = 0; b < batch; ++b) d.times.push_back(rng.uniform());
    d.eps = normal_rows(rng, batch * seq_len, hidden);
    d.eps_rec = normal_rows(rng, batch * seq_len, hidden);
    return d;
}

Draws antithetic_draws(Rng& rng, int batch, int seq_len, int hidden) {
    Draws d;
    const int half = batch / 2;
    for (int b = 0; b < half; ++b) d.times.push_back(rng.uniform());
    for (int b = 0; b < half; ++b) d.times.push_back(1.0 - d.times[static_cast<std::size_t>(b)]);
    if (batch % 2 == 1) d.times.push_back(rng.uniform());
    d.eps = normal_rows(rng, batch * seq_len, hidden);
    d.eps_rec = normal_rows(rng, batch * seq_len, hidden);
    return d;
}

Var diff_loss_nfdm(Tape& tape, const ForwardProcess& fp, const Var& x, const Var& x_hat, const Var& z,
                   const std::vector<double>& times, const Var* context) {
    Jet jx = fp.jet(tape, x, times, context, true);
    Jet jhat = fp.jet(tape, x_hat, times, context, true);
    return nfdm_from_jets(jx, jhat, z, fp.spec().seq_len);
}

Var mulan_simplified_loss(const Jet& jet, const Var& x, const Var& x_hat, int seq_len) {
    if (!jet.gamma.valid()) throw UnsupportedPolicy("simplified loss needs an analytic-SNR process");
    // lambda_x = exp(-gamma) gamma' / 2
    Var lambda = ad::scale(ad::mul(ad::exp(ad::neg(jet.gamma)), jet.dgamma), 0.5);
    return seq_total(ad::mul(lambda, ad::square(ad::sub(x, x_hat))), seq_len);
}

Var rescaled_xpred_loss(const Var& x, const Var& x_hat, int seq_len) {
    return seq_total(ad::square(ad::sub(x, x_hat)), seq_len);
}

Var rec_loss(Tape& tape, const Var& z0, const Var& table, const std::vector<int>& ids, const std::vector<bool>& mask,
             int seq_len) {
    Var logp = ad::log_softmax_rows(ad::matmul_nt(z0, table));
    Var picked = ad::pick(logp, ids);
    Matrix m(static_cast<Eigen::Index>(mask.size()), 1);
    for (std::size_t i = 0; i < mask.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = mask[i] ? -1.0 : 0.0;
    return seq_total(ad::mul(picked, tape.constant(std::move(m))), seq_len);
}

Var prior_loss(const Jet& at_one, int seq_len) {
    Var kl = ad::shift(ad::sub(ad::add(ad::square(at_one.mu), ad::square(at_one.sigma)),
                               ad::scale(ad::log(at_one.sigma), 2.0)),
                       -1.0);
    return ad::scale(seq_total(kl, seq_len), 0.5);
}

LossMode elbo_mode(ProcessKind kind) {
    return kind == ProcessKind::NFDM ? LossMode::NFDM_FULL : LossMode::MULAN_SIMPLIFIED;
}

BatchTerms batch_terms(Tape& tape, const Model& model, const std::vector<int>& ids, const Draws& draws,
                       const TermOptions& opts) {
    const ModelSpec& spec = model.spec();
    const int s = spec.seq_len;
    const auto b = static_cast<Eigen::Index>(draws.times.size());
    if (static_cast<Eigen::Index>(ids.size()) != b * s) throw ShapeError("batch_terms: ids/time count mismatch");
    const ForwardProcess& fp = model.process();
    if (opts.mode == LossMode::MULAN_SIMPLIFIED && !fp.has_analytic_snr()) {
        throw UnsupportedPolicy("simplified loss needs an analytic-SNR process");
    }

    Var table = model.embedding().var(tape);
    Var x = ad::gather_rows(table, ids);
    Var ctx = model.context(tape, ids);
    const Var* cp = ctx.valid() ? &ctx : nullptr;

    BatchTerms out;
    const bool need_derivs = opts.mode == LossMode::NFDM_FULL;
    Jet jx = fp.jet(tape, x, draws.times, cp, need_derivs);
    Var z = latent_from_eps(jx, tape.constant(draws.eps));
    Var x_hat = model.predictor().forward(tape, z, draws.times, table, cp);
    switch (opts.mode) {
        case LossMode::NFDM_FULL: {
            Jet jhat = fp.jet(tape, x_hat, draws.times, cp, true);
            out.diff = nfdm_from_jets(jx, jhat, z, s);
            break;
        }
        case LossMode::MULAN_SIMPLIFIED:
            out.diff = mulan_simplified_loss(jx, x, x_hat, s);
            break;
        case LossMode::RESCALED_XPRED:
            out.diff = rescaled_xpred_loss(x, x_hat, s);
            break;
    }

    std::vector<bool> mask(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) mask[i] = opts.rec_includes_pad || ids[i] != Vocabulary::kPad;
    Jet j0 = fp.jet(tape, x, std::vector<double>(static_cast<std::size_t>(b), 0.0), cp, false);
    Var z0 = latent_from_eps(j0, tape.constant(draws.eps_rec));
    out.rec = rec_loss(tape, z0, table, ids, mask, s);

    Jet j1 = fp.jet(tape, x, std::vector<double>(static_cast<std::size_t>(b), 1.0), cp, false);
    out.prior = prior_loss(j1, s);
    return out;
}

double bpc(const LossBreakdown& b) {
    if (b.char_count < 1) throw InputError("bpc: char_count must be at least 1");
    return b.total() / (std::numbers::ln2 * b.char_count);
}

BpcReport estimate_bpc(const Model& model, const std::vector<TokenSequence>& data, int draws, std::uint64_t seed,
                       std::size_t batch_size) {
    if (data.empty()) throw InputError("estimate_bpc: empty evaluation set");
    if (draws < 1) throw InputError("estimate_bpc: need at least one draw per sequence");
    const int s = model.spec().seq_len;
    const int h = model.spec().hidden;
    const std::size_t n = data.size();
    TermOptions opts;
    opts.mode = elbo_mode(model.spec().process.kind);
    opts.rec_includes_pad = false;

    // values[i * K + k]
    std::vector<double> values(n * static_cast<std::size_t>(draws));
    std::vector<double> diff(n, 0.0), rec(n, 0.0), prior(n, 0.0);
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t stop = std::min(n, start + batch_size);
        std::vector<int> ids;
        for (std::size_t i = start; i < stop; ++i) {
            if (data[i].length() != s) throw ShapeError("estimate_bpc: sequence length mismatch");
            ids.insert(ids.end(), data[i].ids.begin(), data[i].ids.end());
        }
        const auto nb = static_cast<int>(stop - start);
        for (int k = 0; k < draws; ++k) {
            Draws d;
            d.eps.resize(static_cast<Eigen::Index>(nb) * s, h);
            d.eps_rec.resize(static_cast<Eigen::Index>(nb) * s, h);
            for (int j = 0; j < nb; ++j) {
                Rng rng(mix_seed(seed, start + static_cast<std::size_t>(j), static_cast<std::uint64_t>(k)));
                d.times.push_back(rng.uniform());
                d.eps.middleRows(static_cast<Eigen::Index>(j) * s, s) = rng.normal_matrix(s, h);
                d.eps_rec.middleRows(static_cast<Eigen::Index>(j) * s, s) = rng.normal_matrix(s, h);
            }
            Tape tape(false);
            BatchTerms terms = batch_terms(tape, model, ids, d, opts);
            for (int j = 0; j < nb; ++j) {
                const std::size_t i = start + static_cast<std::size_t>(j);
                const double dv = terms.diff.value()(j, 0), rv = terms.rec.value()(j, 0), pv = terms.prior.value()(j, 0);
                diff[i] += dv / draws;
                rec[i] += rv / draws;
                prior[i] += pv / draws;
                values[i * static_cast<std::size_t>(draws) + static_cast<std::size_t>(k)] =
                    (dv + rv + pv) / (std::numbers::ln2 * data[i].char_count);
            }
        }
    }

    BpcReport r;
    r.sequences = n;
    r.draws = draws;
    double mc_var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (int k = 0; k < draws; ++k) mean += values[i * static_cast<std::size_t>(draws) + static_cast<std::size_t>(k)];
        mean /= draws;
        r.per_sequence.push_back(mean);
        if (draws > 1) {
            double ss = 0.0;
            for (int k = 0; k < draws; ++k) {
                const double dlt = values[i * static_cast<std::size_t>(draws) + static_cast<std::size_t>(k)] - mean;
                ss += dlt * dlt;
            }
            mc_var += ss / (draws - 1) / draws;
        }
        r.bpc += mean / static_cast<double>(n);
        r.diff_nats += diff[i] / static_cast<double>(n);
        r.rec_nats += rec[i] / static_cast<double>(n);
        r.prior_nats += prior[i] / static_cast<double>(n);
    }
    if (n > 1) {
        double ss = 0.0;
        for (double v : r.per_sequence) ss += (v - r.bpc) * (v - r.bpc);
        r.se = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
    }
    r.mc_se = std::sqrt(mc_var) / static_cast<double>(n);
    return r;
}

double Adam::lr_at(std::uint64_t step) const {
    double lr = cfg_.lr;
    if (cfg_.warmup_steps > 0 && step < cfg_.warmup_steps) {
        lr *= static_cast<double>(step + 1) / static_cast<double>(cfg_.warmup_steps);
    }
    if (cfg_.total_steps > 0) {
        const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg_.total_steps));
        lr *= 1.0 - (1.0 - cfg_.final_lr_fraction) * frac;
    }
    return lr;
}

void Adam::set_state(std::uint64_t t, std::vector<Matrix> m, std::vector<Matrix> v) {
    if (m.size() != v.size()) throw FormatError("optimizer state: moment count mismatch");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

double Adam::step(const std::vector<ad::Parameter*>& params) {
    if (m_.empty()) {
        for (auto* p : params) {
            m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
            v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        }
    }
    if (m_.size() != params.size()) throw InputError("optimizer: parameter count changed");
    double sq = 0.0;
    for (auto* p : params) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
    double clip = 1.0;
    if (cfg_.clip_norm > 0.0 && t_ >= cfg_.clip_after && norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;

    const double lr = lr_at(t_);
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        Matrix g = p.grad * clip;
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        if (lr == 0.0) continue;
        p.value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
    return norm;
}

StepResult train_step(Model& model, Adam& opt, const std::vector<int>& ids, const Draws& draws, LossMode mode) {
    const int s = model.spec().seq_len;
    const auto b = static_cast<double>(draws.times.size());
    model.params().zero_grad();
    Tape tape;
    TermOptions opts;
    opts.mode = mode;
    opts.rec_includes_pad = true;
    BatchTerms terms = batch_terms(tape, model, ids, draws, opts);
    Var per_seq = ad::add(ad::add(terms.diff, terms.rec), terms.prior);
    Var loss = ad::scale(ad::sum(per_seq), 1.0 / (b * s));

    StepResult r;
    r.loss = loss.value()(0, 0);
    r.mean.mode = mode;
    r.mean.diff_nats = terms.diff.value().mean();
    r.mean.rec_nats = terms.rec.value().mean();
    r.mean.prior_nats = terms.prior.value().mean();
    if (!std::isfinite(r.loss)) {
        throw NumericalError("non-finite loss (diff " + std::to_string(r.mean.diff_nats) + ", rec " +
                             std::to_string(r.mean.rec_nats) + ", prior " + std::to_string(r.mean.prior_nats) + ")");
    }
    tape.backward(loss);
    r.grad_norm = opt.step(model.params().all());
    return r;
}

}  // namespace flowlm
