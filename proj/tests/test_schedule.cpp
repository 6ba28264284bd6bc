// SPDX-License-Identifier: Apache-2.0
#include "flowlm/errors.hpp"
#include "flowlm/schedule.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace flowlm;
using namespace flowlm::schedule;

namespace {

// Independent oracle: closed form written out directly in long double.
long double oracle_gamma(long double t) {
    long double r = std::sqrt(t + (0.99L - t) * 1e-4L);
    r = std::min(std::max(r, 1e-6L), 1.0L - 1e-6L);
    return std::log(r) - std::log(1.0L - r);
}

}  // namespace

TEST_CASE("diffusion-lm gamma reference values") {
    CHECK(dlm_gamma_value(0.5) == doctest::Approx(0.8815).epsilon(1e-4));
    CHECK(dlm_gamma_value(0.5) == doctest::Approx(static_cast<double>(oracle_gamma(0.5L))).epsilon(1e-13));
    const AlphaSigma at0 = alpha_sigma(gamma_dlm(0.0));
    CHECK(at0.alpha2(0) == doctest::Approx(0.99005).epsilon(1e-5));
    CHECK(at0.sigma2(0) == doctest::Approx(0.0099499).epsilon(1e-5));
    CHECK(at0.sigma2(0) == doctest::Approx(std::sqrt(9.9e-5)).epsilon(1e-12));
}

TEST_CASE("gamma_dlm rejects times outside the unit interval") {
    CHECK_THROWS_AS(gamma_dlm(-0.01), InputError);
    CHECK_THROWS_AS(gamma_dlm(1.01), InputError);
    CHECK_NOTHROW(gamma_dlm(1.0));
}

TEST_CASE("analytic dgamma matches central differences") {
    const double h = 1e-5;
    for (int i = 1; i < 100; ++i) {
        const double t = i / 100.0;
        const double fd = (dlm_gamma_value(t + h) - dlm_gamma_value(t - h)) / (2 * h);
        CHECK(std::abs(dlm_dgamma_value(t) - fd) / fd < 1e-4);
    }
}

TEST_CASE("clamped region has zero derivative") {
    // sqrt(1 + s(1)) exceeds the ceiling, so t = 1 sits in the clamp
    CHECK(dlm_sigma2(1.0) == doctest::Approx(kDlmClampHigh));
    CHECK(dlm_dgamma_value(1.0) == 0.0);
}

TEST_CASE("alpha_sigma basics") {
    auto zero = alpha_sigma(GammaPoint::scalar(0.0, 1.0));
    CHECK(zero.alpha2(0) == 0.5);
    CHECK(zero.sigma2(0) == 0.5);
    auto big = alpha_sigma(GammaPoint::scalar(800.0, 1.0));
    CHECK(big.alpha2(0) == doctest::Approx(0.0));
    CHECK(big.sigma2(0) == doctest::Approx(1.0));
    std::mt19937_64 gen(1);
    std::normal_distribution<double> n(0.0, 8.0);
    for (int i = 0; i < 1000; ++i) {
        auto as = alpha_sigma(GammaPoint::scalar(n(gen), 1.0));
        CHECK(std::abs(as.alpha2(0) + as.sigma2(0) - 1.0) < 1e-12);
    }
}

TEST_CASE("markovian volatility") {
    CHECK(markovian_volatility(GammaPoint::scalar(0.0, 2.0)).g2(0) == 1.0);
    CHECK(markovian_volatility(GammaPoint::scalar(0.3, 2.0), 0.0).g2(0) == 0.0);
    CHECK_THROWS_AS(markovian_volatility(GammaPoint::scalar(0.0, 1.0), -1.0), InputError);
    const double g2 = markovian_volatility(gamma_dlm(0.5)).g2(0);
    CHECK(g2 == doctest::Approx(2.4142).epsilon(1e-4));
    CHECK(g2 == doctest::Approx(dlm_g2_closed_form(0.5)).epsilon(1e-10));
}

TEST_CASE("lambda_x") {
    CHECK(lambda_x(GammaPoint::scalar(0.0, 2.0))(0) == 1.0);
    CHECK(lambda_x(GammaPoint::scalar(1.7, 0.0))(0) == 0.0);
    const double h = 1e-5;
    for (int i = 1; i < 20; ++i) {
        const double t = i / 20.0;
        const double fd = -0.5 * (std::exp(-dlm_gamma_value(t + h)) - std::exp(-dlm_gamma_value(t - h))) / (2 * h);
        CHECK(std::abs(lambda_x(gamma_dlm(t))(0) - fd) / fd < 1e-4);
    }
}

TEST_CASE("eta = 1 minimizes the loss multiplier") {
    CHECK(eta_multiplier(1.0) == 1.0);
    CHECK(eta_multiplier(0.5) > eta_multiplier(1.0));
    CHECK(eta_multiplier(2.0) > eta_multiplier(1.0));
    CHECK(eta_multiplier(0.5) == doctest::Approx(1.125));
}

TEST_CASE("fixed average snr") {
    Array same(2);
    same << 0.7, 0.7;
    auto out = fixed_average_snr(1.3, same);
    CHECK(out(0) == doctest::Approx(1.3).epsilon(1e-14));
    CHECK(out(1) == doctest::Approx(1.3).epsilon(1e-14));
    Array one(1);
    one << -4.0;
    CHECK(fixed_average_snr(0.2, one)(0) == doctest::Approx(0.2).epsilon(1e-14));
    CHECK_THROWS_AS(fixed_average_snr(0.0, Array()), InputError);

    std::mt19937_64 gen(11);
    std::normal_distribution<double> n(0.0, 3.0);
    Array raw(128);
    for (auto& v : raw) v = n(gen);
    const double gg = 0.4;
    auto g = fixed_average_snr(gg, raw);
    long double mean = 0;
    for (auto v : g) mean += std::exp(-static_cast<long double>(v));
    mean /= 128;
    CHECK(std::abs(static_cast<double>(mean) / std::exp(-gg) - 1.0) < 1e-6);
}

TEST_CASE("sigma_tilde_star") {
    CHECK(sigma_tilde_star(GammaPoint::scalar(0.0, 1.0), GammaPoint::scalar(std::log(2.0), 1.0))(0) ==
          doctest::Approx(0.5));
    CHECK(sigma_tilde_star(gamma_dlm(0.3), gamma_dlm(0.3))(0) == 0.0);
    const double v = sigma_tilde_star(gamma_dlm(0.4), gamma_dlm(0.5))(0);
    const double direct = 1.0 - std::exp(-dlm_gamma_value(0.5)) / std::exp(-dlm_gamma_value(0.4));
    CHECK(v > 0.0);
    CHECK(v < 1.0);
    CHECK(v == doctest::Approx(direct).epsilon(1e-12));
    CHECK_THROWS_AS(sigma_tilde_star(gamma_dlm(0.5), gamma_dlm(0.4)), ScheduleError);
}

TEST_CASE("schedule csv has a header and 1000 rows") {
    std::ostringstream os;
    write_dlm_schedule_csv(os, 1000);
    std::istringstream is(os.str());
    std::string line;
    int rows = -1;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 1000);
    CHECK(os.str().rfind("t,gamma,dgamma_dt,g2,snr\n", 0) == 0);
}
