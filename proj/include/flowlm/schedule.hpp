// SPDX-License-Identifier: Apache-2.0
//
// Analytic noise-schedule algebra in the log-inverse-SNR parameterization:
// SNR = exp(-gamma), alpha^2 = sigmoid(-gamma), sigma^2 = sigmoid(gamma).
#pragma once

#include <Eigen/Dense>

#include <iosfwd>

namespace flowlm::schedule {

using Array = Eigen::ArrayXd;

// gamma and its time derivative, per dimension (size 1 for global schedules).
struct GammaPoint {
    Array gamma;
    Array dgamma_dt;

    static GammaPoint scalar(double gamma, double dgamma_dt);
    Eigen::Index size() const { return gamma.size(); }
};

// Variance-preserving coefficients: alpha2 + sigma2 == 1.
struct AlphaSigma {
    Array alpha2;
    Array sigma2;
};

struct VolatilityPoint {
    Array g2;
    double eta = 1.0;
};

// Endpoint clamp for sqrt(t + s(t)) in the Diffusion-LM schedule.
inline constexpr double kDlmClampLow = 1e-6;
inline constexpr double kDlmClampHigh = 1.0 - 1e-6;
inline constexpr double kDlmOffsetScale = 1e-4;
// Literal constant of the closed-form Diffusion-LM volatility.
inline constexpr double kDlmVolatilityNumerator = 0.9999;

double sigmoid(double x);

// s(t) = (0.99 - t) * 1e-4
double dlm_offset(double t);
// r(t) = clamp(sqrt(t + s(t))), which equals sigma^2(t) of the static schedule.
double dlm_sigma2(double t);

// Static Diffusion-LM schedule: gamma(t) = ln r - ln(1 - r). Throws InputError
// for t outside [0, 1]. dgamma_dt is exact; zero inside the clamped region.
GammaPoint gamma_dlm(double t);
double dlm_gamma_value(double t);
double dlm_dgamma_value(double t);

AlphaSigma alpha_sigma(const GammaPoint& gp);

// g^2 = sigmoid(gamma) * dgamma_dt * eta; eta = 1 is the Markovian choice.
VolatilityPoint markovian_volatility(const GammaPoint& gp, double eta = 1.0);

// Closed form 0.9999 / (2 sigma^2 (1 - sigma^2)) for the static schedule.
double dlm_g2_closed_form(double t);

// Diffusion-loss weight on ||x - x_hat||^2: 0.5 * exp(-gamma) * dgamma_dt
// times (1 + eta)^2 / (4 eta), which is 1 at eta = 1.
Array lambda_x(const GammaPoint& gp, double eta = 1.0);
double eta_multiplier(double eta);

// gamma_j = gamma_global + raw_j - (log D - logsumexp(-raw)); the mean of
// exp(-gamma_j) over j equals exp(-gamma_global).
Array fixed_average_snr(double gamma_global, const Array& gamma_raw);

// 1 - SNR(t)/SNR(s) = 1 - exp(gamma_s - gamma_t) for s < t. Throws
// ScheduleError when gamma_s > gamma_t in any dimension.
Array sigma_tilde_star(const GammaPoint& at_s, const GammaPoint& at_t);

// One row per grid point: t,gamma,dgamma_dt,g2,snr.
void write_dlm_schedule_csv(std::ostream& out, int points = 1000);

}  // namespace flowlm::schedule
