// Straight-through soft-to-hard quantization: hard index selection with the
// soft average retained as the backward path,
//   z_q = sum_k p_k c_k + sg(c_{k*} - sum_k p_k c_k).
#pragma once

#include <cstring>
#include <stdexcept>
#include <vector>

#include "lgq/assignment.hpp"
#include "lgq/codebook.hpp"
#include "lgq/numerics.hpp"

namespace lgq {

struct QuantizeResult {
    std::vector<std::size_t> indices;  // k*_t = argmax_k p_{t,k}, lowest index on ties
    Matrix hard_tokens;                // T x C, row t is centers row indices[t], bit-exact
    Matrix soft_average;               // T x C, sum_k p_{t,k} c_k
};

inline std::size_t argmax_row(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
        if (row[k] > row[best]) best = k;  // strict: ties keep the lowest index
    return best;
}

inline QuantizeResult quantize(const LatentBatch& batch, const Codebook& cb,
                               const AssignmentMatrix& assign) {
    const std::size_t T = batch.count(), K = cb.K(), C = cb.C();
    if (batch.dim() != C || assign.tokens() != T || assign.codes() != K)
        throw std::invalid_argument("quantize: shape mismatch");
    QuantizeResult out;
    out.indices.resize(T);
    out.hard_tokens = Matrix(T, C);
    out.soft_average = Matrix(T, C);
    for (std::size_t t = 0; t < T; ++t) {
        const std::size_t k_star = argmax_row(assign.probs.row(t));
        out.indices[t] = k_star;
        // Hard value is copied from the codebook row directly, never
        // reconstructed through the soft-average identity.
        std::memcpy(out.hard_tokens.row(t).data(), cb.centers().row(t == t ? k_star : 0).data(),
                    sizeof(double) * C);
        for (std::size_t k = 0; k < K; ++k) {
            const double p = assign.probs(t, k);
            for (std::size_t c = 0; c < C; ++c) out.soft_average(t, c) += p * cb.centers()(k, c);
        }
    }
    return out;
}

struct SteGradients {
    Matrix grad_tokens;   // T x C, dL/dz
    Matrix grad_centers;  // K x C, dL/dc
};

// Backward pass of the straight-through estimator. `upstream` is dL/ds where
// s_t is the soft average; the hard selection itself carries no gradient.
// Centers receive two mandatory contributions: the explicit c_k factor in
// the soft average (p_{t,j} * upstream_t) and the dependence of p on c_j.
inline SteGradients ste_backward(const QuantizeResult& result, const Matrix& upstream,
                                 const LatentBatch& batch, const Codebook& cb,
                                 const AssignmentMatrix& assign) {
    const std::size_t T = batch.count(), K = cb.K(), C = cb.C();
    if (upstream.rows() != T || upstream.cols() != C)
        throw std::invalid_argument("ste_backward: upstream shape mismatch");
    if (result.soft_average.rows() != T)
        throw std::invalid_argument("ste_backward: result shape mismatch");

    // Through p: dL/dp_{t,k} = c_k . upstream_t.
    Matrix h(T, K);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < K; ++k) {
            double dot = 0.0;
            for (std::size_t c = 0; c < C; ++c) dot += cb.centers()(k, c) * upstream(t, c);
            h(t, k) = dot;
        }
    ProbBackprop chain = backprop_through_probs(h, batch, cb, assign);

    // Direct term of the soft average.
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < K; ++k) {
            const double p = assign.probs(t, k);
            for (std::size_t c = 0; c < C; ++c)
                chain.grad_centers(k, c) += p * upstream(t, c);
        }
    return SteGradients{std::move(chain.grad_tokens), std::move(chain.grad_centers)};
}

// Mean per-token gap ||hard - soft||_2, a cheap proxy for the estimator's
// bias; it shrinks as assignments sharpen under annealing.
inline double ste_bias_proxy(const QuantizeResult& result) {
    const std::size_t T = result.hard_tokens.rows();
    if (T == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        double sq = 0.0;
        for (std::size_t c = 0; c < result.hard_tokens.cols(); ++c) {
            const double d = result.hard_tokens(t, c) - result.soft_average(t, c);
            sq += d * d;
        }
        acc += std::sqrt(sq);
    }
    return acc / static_cast<double>(T);
}

}  // namespace lgq
