// SPDX-License-Identifier: Apache-2.0
#include "flowlm/schedule.hpp"

#include "flowlm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>

namespace flowlm::schedule {

namespace {

void require_unit_time(double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw InputError("time must lie in [0, 1], got " + std::to_string(t));
    }
}

double raw_dlm_r(double t) { return std::sqrt(t + dlm_offset(t)); }

}  // namespace

GammaPoint GammaPoint::scalar(double gamma, double dgamma_dt) {
    return GammaPoint{Array::Constant(1, gamma), Array::Constant(1, dgamma_dt)};
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double dlm_offset(double t) { return (0.99 - t) * kDlmOffsetScale; }

double dlm_sigma2(double t) {
    require_unit_time(t);
    return std::clamp(raw_dlm_r(t), kDlmClampLow, kDlmClampHigh);
}

double dlm_gamma_value(double t) {
    const double r = dlm_sigma2(t);
    return std::log(r) - std::log1p(-r);
}

double dlm_dgamma_value(double t) {
    require_unit_time(t);
    const double raw = raw_dlm_r(t);
    if (raw <= kDlmClampLow || raw >= kDlmClampHigh) return 0.0;
    // d/dt sqrt(t + s(t)) with s'(t) = -1e-4
    const double dr = (1.0 - kDlmOffsetScale) / (2.0 * raw);
    return dr * (1.0 / raw + 1.0 / (1.0 - raw));
}

GammaPoint gamma_dlm(double t) { return GammaPoint::scalar(dlm_gamma_value(t), dlm_dgamma_value(t)); }

AlphaSigma alpha_sigma(const GammaPoint& gp) {
    AlphaSigma out;
    out.alpha2 = gp.gamma.unaryExpr([](double g) { return sigmoid(-g); });
    out.sigma2 = gp.gamma.unaryExpr([](double g) { return sigmoid(g); });
    return out;
}

VolatilityPoint markovian_volatility(const GammaPoint& gp, double eta) {
    if (eta < 0.0) throw InputError("eta must be non-negative");
    VolatilityPoint out;
    out.eta = eta;
    out.g2 = gp.gamma.unaryExpr([](double g) { return sigmoid(g); }) * gp.dgamma_dt * eta;
    return out;
}

double dlm_g2_closed_form(double t) {
    const double s2 = dlm_sigma2(t);
    return kDlmVolatilityNumerator / (2.0 * s2 * (1.0 - s2));
}

double eta_multiplier(double eta) {
    if (eta <= 0.0) throw InputError("eta must be positive for the loss weight");
    return (1.0 + eta) * (1.0 + eta) / (4.0 * eta);
}

Array lambda_x(const GammaPoint& gp, double eta) {
    return 0.5 * (-gp.gamma).exp() * gp.dgamma_dt * eta_multiplier(eta);
}

Array fixed_average_snr(double gamma_global, const Array& gamma_raw) {
    const Eigen::Index d = gamma_raw.size();
    if (d == 0) throw InputError("fixed_average_snr: empty gamma array");
    const Array neg = -gamma_raw;
    const double m = neg.maxCoeff();
    const double lse = m + std::log((neg - m).exp().sum());
    const double offset = std::log(static_cast<double>(d)) - lse;
    return gamma_global + gamma_raw - offset;
}

Array sigma_tilde_star(const GammaPoint& at_s, const GammaPoint& at_t) {
    if (at_s.size() != at_t.size()) throw ShapeError("sigma_tilde_star: dimension mismatch");
    if ((at_s.gamma > at_t.gamma).any()) {
        throw ScheduleError("sigma_tilde_star: gamma(s) > gamma(t); schedule not monotone");
    }
    return 1.0 - (at_s.gamma - at_t.gamma).exp();
}

void write_dlm_schedule_csv(std::ostream& out, int points) {
    out << "t,gamma,dgamma_dt,g2,snr\n";
    out << std::setprecision(17);
    for (int i = 0; i < points; ++i) {
        const double t = points == 1 ? 0.0 : static_cast<double>(i) / (points - 1);
        const GammaPoint gp = gamma_dlm(t);
        const double g2 = markovian_volatility(gp).g2(0);
        out << t << ',' << gp.gamma(0) << ',' << gp.dgamma_dt(0) << ',' << g2 << ','
            << std::exp(-gp.gamma(0)) << '\n';
    }
}

}  // namespace flowlm::schedule
