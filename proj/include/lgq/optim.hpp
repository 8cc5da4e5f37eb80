// SGD and Adam parameter updates. Each Optimizer instance owns the moment
// state for exactly one parameter matrix.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <variant>

#include "lgq/numerics.hpp"

namespace lgq {

struct SgdConfig {
    double lr = 1e-2;
};

struct AdamConfig {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

using OptimizerConfig = std::variant<SgdConfig, AdamConfig>;

class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(std::move(cfg)) {}

    // theta <- theta - update(grad). Throws on non-finite gradients, naming
    // the first offending (row, col).
    void step(Matrix& params, const Matrix& grad) {
        if (!params.same_shape(grad)) throw std::invalid_argument("Optimizer: shape mismatch");
        for (std::size_t r = 0; r < grad.rows(); ++r)
            for (std::size_t c = 0; c < grad.cols(); ++c)
                if (!is_finite(grad(r, c)))
                    throw std::invalid_argument("Optimizer: non-finite gradient at (" +
                                                std::to_string(r) + ", " + std::to_string(c) + ")");
        if (std::holds_alternative<SgdConfig>(cfg_)) {
            const double lr = std::get<SgdConfig>(cfg_).lr;
            for (std::size_t i = 0; i < params.size(); ++i)
                params.data()[i] -= lr * grad.data()[i];
            return;
        }
        const AdamConfig& a = std::get<AdamConfig>(cfg_);
        if (m_.size() != params.size()) {
            m_ = Matrix(params.rows(), params.cols());
            v_ = Matrix(params.rows(), params.cols());
            t_ = 0;
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(a.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(a.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grad.data()[i];
            double& m = m_.data()[i];
            double& v = v_.data()[i];
            m = a.beta1 * m + (1.0 - a.beta1) * g;
            v = a.beta2 * v + (1.0 - a.beta2) * g * g;
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            params.data()[i] -= a.lr * mhat / (std::sqrt(vhat) + a.eps);
        }
    }

    const OptimizerConfig& config() const { return cfg_; }

private:
    OptimizerConfig cfg_;
    Matrix m_, v_;
    std::uint64_t t_ = 0;
};

}  // namespace lgq
