#pragma once

#include "lnas/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace lnas {

// SGD with Nesterov momentum and L2 weight decay:
//   d = g + wd * w;  buf = mu * buf + d;  w -= lr * (d + mu * buf)
class NesterovSgd {
public:
    NesterovSgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

    void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr);
    const std::vector<Tensor>& buffers() const noexcept { return buffers_; }

private:
    double momentum_;
    double weight_decay_;
    std::vector<Tensor> buffers_;
};

// Adam with L2 weight decay folded into the gradient and standard bias
// correction.
class Adam {
public:
    Adam(double lr, double beta1, double beta2, double weight_decay, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps)
    {
    }

    void step(std::span<double> params, std::span<const double> grad);
    std::size_t steps() const noexcept { return t_; }
    const std::vector<double>& first_moment() const noexcept { return m_; }
    const std::vector<double>& second_moment() const noexcept { return v_; }

private:
    double lr_, beta1_, beta2_, weight_decay_, eps_;
    std::size_t t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

} // namespace lnas
