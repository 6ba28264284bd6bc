// SPDX-License-Identifier: Apache-2.0
#include "flowlm/errors.hpp"
#include "flowlm/forward_process.hpp"
#include "flowlm/schedule.hpp"
#include "testing.hpp"

#include <doctest.h>

#include <cmath>

using namespace flowlm;
using ad::Matrix;
using flowlm::testing::random_matrix;

namespace {

constexpr int kS = 5;
constexpr int kH = 4;

struct Built {
    nn::ParameterSet ps;
    std::unique_ptr<ForwardProcess> fp;
    Matrix context;  // [1 x H], used when the process needs it
    const Matrix* ctx() const { return fp->needs_context() ? &context : nullptr; }
};

enum class Variant { STATIC, MULAN, MULAN_FIXED, MULAN_CONTEXT, NFDM };

std::unique_ptr<Built> build(Variant v, std::uint64_t seed = 1, bool perturb = true, double log_sigma_bar_init = 0.0) {
    auto b = std::make_unique<Built>();
    ProcessSpec spec;
    spec.hidden = kH;
    spec.seq_len = kS;
    spec.kind = v == Variant::STATIC ? ProcessKind::STATIC_DLM
              : v == Variant::NFDM  ? ProcessKind::NFDM
                                    : ProcessKind::MULAN;
    spec.gamma.degree = 4;
    spec.gamma.use_context = v == Variant::MULAN_CONTEXT;
    spec.gamma.context_width = 8;
    spec.fixed_average_snr = v == Variant::MULAN_FIXED;
    spec.nfdm_width = 8;
    spec.nfdm_layers = 1;
    spec.nfdm_heads = 2;
    spec.fourier = nn::FourierTime{8, 1.0, 50.0};
    spec.volatility_width = 8;
    spec.log_sigma_bar_init = log_sigma_bar_init;
    Rng rng(seed);
    b->fp = std::make_unique<ForwardProcess>(b->ps, spec, rng);
    std::mt19937_64 gen(seed + 100);
    // move away from the symmetric initialization so every term matters
    if (perturb) {
        for (auto* p : b->ps.all()) p->value += random_matrix(gen, p->value.rows(), p->value.cols(), 0.3);
    }
    b->context = random_matrix(gen, 1, kH);
    return b;
}

const Variant kAll[] = {Variant::STATIC, Variant::MULAN, Variant::MULAN_FIXED, Variant::MULAN_CONTEXT, Variant::NFDM};

double max_rel(const Matrix& a, const Matrix& ref) {
    return (a - ref).cwiseAbs().maxCoeff() / std::max(1e-12, ref.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("NFDM boundary conditions hold exactly") {
    auto b = build(Variant::NFDM);
    std::mt19937_64 gen(2);
    for (int i = 0; i < 20; ++i) {
        Matrix x = random_matrix(gen, kS, kH, 2.0);
        GaussianMarginal m0 = b->fp->marginal(x, 0.0);
        GaussianMarginal m1 = b->fp->marginal(x, 1.0);
        CHECK((m0.mu - x).cwiseAbs().maxCoeff() == 0.0);
        CHECK((m0.sigma.array() == 0.01).all());
        CHECK((m1.mu.array() == 0.0).all());
        CHECK((m1.sigma.array() == 1.0).all());
        Matrix z = random_matrix(gen, kS, kH);
        CHECK(max_rel(b->fp->invert(z, 0.0, x), (z - x) / 0.01) < 1e-12);
    }
}

TEST_CASE("NFDM sigma_bar bias shifts log sigma by c t (1 - t) and keeps the boundaries") {
    auto base = build(Variant::NFDM, 4, false);
    auto shifted = build(Variant::NFDM, 4, false, 6.0);
    std::mt19937_64 gen(5);
    Matrix x = random_matrix(gen, kS, kH, 2.0);
    for (double t : {0.0, 0.1, 0.5, 0.8, 1.0}) {
        GaussianMarginal a = base->fp->marginal(x, t);
        GaussianMarginal b = shifted->fp->marginal(x, t);
        CHECK(max_rel(b.mu, a.mu) < 1e-12);
        Matrix diff = (b.sigma.array().log() - a.sigma.array().log()).matrix();
        CHECK((diff.array() - 6.0 * t * (1.0 - t)).abs().maxCoeff() < 1e-12);
    }
    CHECK((shifted->fp->marginal(x, 0.0).sigma.array() == 0.01).all());
    CHECK((shifted->fp->marginal(x, 1.0).sigma.array() == 1.0).all());
}

TEST_CASE("static marginal at t = 0.5") {
    auto b = build(Variant::STATIC);
    std::mt19937_64 gen(3);
    Matrix x = random_matrix(gen, kS, kH);
    GaussianMarginal m = b->fp->marginal(x, 0.5);
    const double alpha = std::sqrt(schedule::sigmoid(-schedule::dlm_gamma_value(0.5)));
    CHECK(alpha * alpha == doctest::Approx(0.2929).epsilon(1e-4));
    CHECK(max_rel(m.mu, alpha * x) < 1e-12);
    CHECK_THROWS_AS(b->fp->marginal(x, 1.5), InputError);
    CHECK_THROWS_AS(b->fp->marginal(Matrix::Zero(kS, kH + 1), 0.5), ShapeError);
}

TEST_CASE("MULAN marginals are variance preserving") {
    for (auto v : {Variant::MULAN, Variant::MULAN_FIXED, Variant::MULAN_CONTEXT}) {
        auto b = build(v);
        Matrix ones = Matrix::Ones(kS, kH);
        for (double t : {0.0, 0.2, 0.5, 0.9, 1.0}) {
            GaussianMarginal m = b->fp->marginal(ones, t, b->ctx());
            CHECK(((m.mu.array().square() + m.sigma.array().square()) - 1.0).abs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("sample_zt basics and Monte-Carlo moments") {
    auto b = build(Variant::NFDM);
    std::mt19937_64 gen(4);
    Matrix x = random_matrix(gen, kS, kH);
    const double t = 0.4;
    GaussianMarginal m = b->fp->marginal(x, t);
    CHECK(b->fp->sample_zt(Matrix::Zero(kS, kH), t, x) == m.mu);
    Matrix e1 = Matrix::Zero(kS, kH);
    e1(2, 1) = 1.0;
    Matrix z = b->fp->sample_zt(e1, t, x);
    CHECK(z(2, 1) - m.mu(2, 1) == doctest::Approx(m.sigma(2, 1)).epsilon(1e-12));

    // 1e5 draws per coordinate, evaluated in tiled batches
    const int reps = 1000, rounds = 100;
    Matrix tiled(static_cast<Eigen::Index>(reps) * kS, kH);
    for (int r = 0; r < reps; ++r) tiled.middleRows(r * kS, kS) = x;
    Rng rng(5);
    Matrix sum = Matrix::Zero(kS, kH), sq = Matrix::Zero(kS, kH);
    for (int k = 0; k < rounds; ++k) {
        Matrix zs = b->fp->sample_zt(rng.normal_matrix(tiled.rows(), kH), t, tiled);
        for (int r = 0; r < reps; ++r) {
            Matrix d = zs.middleRows(r * kS, kS) - m.mu;
            sum += d;
            sq += d.cwiseProduct(d);
        }
    }
    const double n = static_cast<double>(reps) * rounds;
    Matrix mean = sum / n;
    Matrix var = sq / n - mean.cwiseProduct(mean);
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
        const double s2 = m.sigma.data()[i] * m.sigma.data()[i];
        CHECK(std::abs(mean.data()[i]) < 3.0 * std::sqrt(s2 / n));
        // Var of the sample variance of a Gaussian is 2 sigma^4 / n
        CHECK(std::abs(var.data()[i] - s2) < 3.0 * std::sqrt(2.0 / n) * s2);
    }
}

TEST_CASE("inversion round trip across kinds") {
    std::mt19937_64 gen(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto v : kAll) {
        auto b = build(v);
        for (int i = 0; i < 200; ++i) {
            const double t = u(gen);
            Matrix x = random_matrix(gen, kS, kH);
            Matrix z = random_matrix(gen, kS, kH);
            Matrix eps = b->fp->invert(z, t, x, b->ctx());
            Matrix back = b->fp->sample_zt(eps, t, x, b->ctx());
            CHECK((back - z).cwiseAbs().maxCoeff() < 1e-6);
            GaussianMarginal m = b->fp->marginal(x, t, b->ctx());
            CHECK(b->fp->invert(m.mu, t, x, b->ctx()).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

namespace {

double worst_drift_error(const Built& b, double h, std::mt19937_64& gen) {
    double worst = 0.0;
    for (int i = 0; i <= 18; ++i) {
        const double t = 0.05 + 0.05 * i;
        Matrix x = random_matrix(gen, kS, kH);
        Matrix eps = random_matrix(gen, kS, kH);
        Matrix z = b.fp->sample_zt(eps, t, x, b.ctx());
        Matrix fd = (b.fp->sample_zt(eps, t + h, x, b.ctx()) - b.fp->sample_zt(eps, t - h, x, b.ctx())) / (2 * h);
        worst = std::max(worst, max_rel(b.fp->ode_drift(z, t, x, b.ctx()), fd));
    }
    return worst;
}

}  // namespace

TEST_CASE("ode drift matches finite differences of F in t") {
    std::mt19937_64 gen(7);
    for (auto v : kAll) {
        auto b = build(v, 1, false);
        CAPTURE(static_cast<int>(v));
        CHECK(worst_drift_error(*b, 1e-3, gen) < 1e-3);
    }
}

TEST_CASE("ode drift is exact for strongly perturbed networks") {
    // large random parameters make F(t) sharply curved; a small step isolates
    // the analytic derivative from finite-difference truncation error
    std::mt19937_64 gen(17);
    for (auto v : kAll) {
        auto b = build(v);
        CAPTURE(static_cast<int>(v));
        CHECK(worst_drift_error(*b, 1e-5, gen) < 1e-5);
    }
}

TEST_CASE("static drift at eps = 0 is alpha' x") {
    auto b = build(Variant::STATIC);
    std::mt19937_64 gen(8);
    Matrix x = random_matrix(gen, kS, kH);
    const double t = 0.3;
    GaussianMarginal m = b->fp->marginal(x, t);
    const double g = schedule::dlm_gamma_value(t), dg = schedule::dlm_dgamma_value(t);
    const double alpha = std::sqrt(schedule::sigmoid(-g));
    const double dalpha = -0.5 * alpha * schedule::sigmoid(g) * dg;
    CHECK(max_rel(b->fp->ode_drift(m.mu, t, x), dalpha * x) < 1e-12);
}

TEST_CASE("MULAN drift vanishes where gamma is flat") {
    auto b = build(Variant::MULAN);
    // zero the leading coefficient of dimension (0, 0): dgamma(0) = 0 there
    auto& base = b->ps.get("gamma.base");
    base.value(0, 0) = -800.0;
    std::mt19937_64 gen(9);
    Matrix x = random_matrix(gen, kS, kH);
    GaussianMarginal m = b->fp->marginal(x, 0.0);
    Matrix f = b->fp->ode_drift(m.mu, 0.0, x);
    CHECK(f(0, 0) == 0.0);
    CHECK(std::abs(f(0, 1)) > 0.0);
}

TEST_CASE("score matches the gradient of the log density") {
    std::mt19937_64 gen(10);
    for (auto v : kAll) {
        auto b = build(v);
        const double t = 0.35;
        Matrix x = random_matrix(gen, kS, kH);
        GaussianMarginal m = b->fp->marginal(x, t, b->ctx());
        CHECK(b->fp->score(m.mu, t, x, b->ctx()).cwiseAbs().maxCoeff() == 0.0);
        Matrix shifted = m.mu + m.sigma;
        CHECK(max_rel(b->fp->score(shifted, t, x, b->ctx()), -m.sigma.cwiseInverse()) < 1e-12);

        Matrix z = b->fp->sample_zt(random_matrix(gen, kS, kH), t, x, b->ctx());
        auto logq = [&](const Matrix& zz) {
            Matrix r = (zz - m.mu).cwiseQuotient(m.sigma);
            return -0.5 * r.squaredNorm() - m.sigma.array().log().sum();
        };
        Matrix s = b->fp->score(z, t, x, b->ctx());
        Matrix fd(kS, kH);
        const double h = 1e-5;
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            Matrix up = z, dn = z;
            up.data()[i] += h * m.sigma.data()[i];
            dn.data()[i] -= h * m.sigma.data()[i];
            fd.data()[i] = (logq(up) - logq(dn)) / (2 * h * m.sigma.data()[i]);
        }
        CHECK(max_rel(s, fd) < 1e-4);
    }
}

TEST_CASE("forward and backward drifts") {
    std::mt19937_64 gen(11);
    for (auto v : kAll) {
        auto b = build(v);
        const double t = 0.6;
        Matrix x = random_matrix(gen, kS, kH);
        Matrix z = b->fp->sample_zt(random_matrix(gen, kS, kH), t, x, b->ctx());
        Matrix f = b->fp->ode_drift(z, t, x, b->ctx());
        Matrix fw = b->fp->drift_forward(z, t, x, b->ctx());
        Matrix bw = b->fp->drift_backward(z, t, x, b->ctx());
        CHECK(max_rel(0.5 * (fw + bw), f) < 1e-12);
        Matrix g2 = b->fp->volatility(x, t, b->ctx());
        CHECK(g2.minCoeff() > 0.0);
        CHECK(max_rel(fw - bw, g2.cwiseProduct(b->fp->score(z, t, x, b->ctx()))) < 1e-10);
    }
}

TEST_CASE("zero volatility collapses both drifts to the ODE drift") {
    nn::ParameterSet ps;
    ProcessSpec spec;
    spec.hidden = kH;
    spec.seq_len = kS;
    spec.eta = 0.0;
    Rng rng(1);
    ForwardProcess fp(ps, spec, rng);
    std::mt19937_64 gen(12);
    Matrix x = random_matrix(gen, kS, kH), z = random_matrix(gen, kS, kH);
    CHECK(fp.drift_forward(z, 0.4, x) == fp.ode_drift(z, 0.4, x));
    CHECK(fp.drift_backward(z, 0.4, x) == fp.ode_drift(z, 0.4, x));
}

TEST_CASE("Markovian forward drift does not depend on x") {
    std::mt19937_64 gen(13);
    for (auto v : {Variant::STATIC, Variant::MULAN, Variant::MULAN_FIXED, Variant::MULAN_CONTEXT}) {
        auto b = build(v);
        for (double t : {0.1, 0.5, 0.9}) {
            Matrix z = random_matrix(gen, kS, kH);
            Matrix x1 = random_matrix(gen, kS, kH), x2 = random_matrix(gen, kS, kH, 3.0);
            Matrix d1 = b->fp->drift_forward(z, t, x1, b->ctx());
            Matrix d2 = b->fp->drift_forward(z, t, x2, b->ctx());
            CHECK((d1 - d2).cwiseAbs().maxCoeff() < 1e-6);
        }
    }
}

TEST_CASE("fixed average SNR pins the dimension-mean SNR to the static schedule") {
    auto b = build(Variant::MULAN_FIXED);
    Matrix x = Matrix::Ones(kS, kH);
    for (double t : {0.1, 0.4, 0.8}) {
        Matrix g = b->fp->gamma(x, t);
        const double mean_snr = (-g.array()).exp().mean();
        CHECK(mean_snr / std::exp(-schedule::dlm_gamma_value(t)) == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("inversion refuses sigma below the floor") {
    Matrix s = Matrix::Constant(2, 2, 1e-6);
    CHECK_THROWS_AS(require_sigma_floor(s), DegenerateError);
    CHECK_NOTHROW(require_sigma_floor(Matrix::Constant(2, 2, 1e-3)));
}
