#include "lnas/optimizers.hpp"

#include <cmath>

namespace lnas {

void NesterovSgd::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr)
{
    if (grads.size() != params.size())
        throw ShapeError("NesterovSgd: gradient count differs from parameter count");
    if (buffers_.empty()) {
        buffers_.reserve(params.size());
        for (const auto& p : params)
            buffers_.push_back(Tensor::zeros(p.shape()));
    }
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto w = params[t].data();
        auto g = grads[t].data();
        auto buf = buffers_[t].data();
        if (g.size() != w.size())
            throw ShapeError("NesterovSgd: gradient shape mismatch for parameter " + std::to_string(t));
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double d = g[i] + weight_decay_ * w[i];
            buf[i] = momentum_ * buf[i] + d;
            w[i] -= lr * (d + momentum_ * buf[i]);
        }
        params[t].check_finite("NesterovSgd::step");
    }
}

void Adam::step(std::span<double> params, std::span<const double> grad)
{
    if (grad.size() != params.size())
        throw ShapeError("Adam: gradient length differs from parameter length");
    if (m_.empty()) {
        m_.assign(params.size(), 0.0);
        v_.assign(params.size(), 0.0);
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i] + weight_decay_ * params[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
        const double m_hat = m_[i] / bc1;
        const double v_hat = v_[i] / bc2;
        params[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
        if (!std::isfinite(params[i]))
            throw NonFiniteError("Adam::step produced a non-finite parameter");
    }
}

} // namespace lnas
