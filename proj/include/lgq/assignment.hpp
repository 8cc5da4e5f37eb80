// Distance kernels, the temperature-controlled Gibbs assignment rule, the
// linear annealing schedule, and the analytic Jacobians of the assignment
// probabilities with respect to latents and centroids.
#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgq/codebook.hpp"
#include "lgq/numerics.hpp"

namespace lgq {

// Raised when a Jacobian is requested at a point where the unsquared kernel
// is non-differentiable (a token sitting exactly on a centroid). No
// subgradient is substituted; silent substitution would corrupt gradient
// checks downstream.
struct SingularityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// euclid:  energy(z, c) = ||z - c||_2        (training default)
// squared: energy(z, c) = ||z - c||_2^2      (Gaussian-posterior view)
enum class DistanceKernel { Euclid, SquaredEuclid };

inline const char* kernel_name(DistanceKernel k) {
    return k == DistanceKernel::Euclid ? "euclid" : "squared";
}

inline DistanceKernel kernel_from_name(const std::string& s) {
    if (s == "euclid") return DistanceKernel::Euclid;
    if (s == "squared" || s == "squared_euclid") return DistanceKernel::SquaredEuclid;
    throw std::invalid_argument("unknown kernel '" + s + "' (expected euclid|squared)");
}

inline double token_energy(std::span<const double> z, std::span<const double> c,
                           DistanceKernel kernel) {
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double d = z[i] - c[i];
        acc += d * d;
    }
    return kernel == DistanceKernel::Euclid ? std::sqrt(acc) : acc;
}

// T x K energy matrix between every token and every centroid. Token rows are
// independent, so the row loop may fan out across worker threads without
// affecting the result.
inline Matrix pairwise_energy(const LatentBatch& batch, const Codebook& cb, DistanceKernel kernel) {
    if (batch.dim() != cb.C())
        throw std::invalid_argument("pairwise_energy: batch dim " + std::to_string(batch.dim()) +
                                    " != codebook dim " + std::to_string(cb.C()));
    Matrix out(batch.count(), cb.K());
    parallel_rows(batch.count(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t t = lo; t < hi; ++t)
            for (std::size_t k = 0; k < cb.K(); ++k)
                out(t, k) = token_energy(batch.tokens.row(t), cb.centers().row(k), kernel);
    });
    return out;
}

// Row-stochastic soft assignments with their generating energies.
struct AssignmentMatrix {
    Matrix probs;       // T x K, rows sum to 1
    Matrix distances;   // T x K energies the probs were computed from
    double tau = 1.0;
    DistanceKernel kernel = DistanceKernel::Euclid;

    std::size_t tokens() const { return probs.rows(); }
    std::size_t codes() const { return probs.cols(); }

    // Marginal code usage over the batch, p_bar_k = mean_t p_{t,k}.
    std::vector<double> marginal() const {
        std::vector<double> bar(codes(), 0.0);
        for (std::size_t t = 0; t < tokens(); ++t)
            for (std::size_t k = 0; k < codes(); ++k) bar[k] += probs(t, k);
        for (double& v : bar) v /= static_cast<double>(tokens());
        return bar;
    }
};

// Gibbs rule p_{t,k} = exp(-d_{t,k}/tau) / sum_j exp(-d_{t,j}/tau), computed
// through logsumexp so large energy spreads cannot overflow. Entries can
// still underflow to zero once (d - d_min)/tau exceeds ~745.
inline AssignmentMatrix soft_assign(Matrix energies, double tau,
                                    DistanceKernel kernel = DistanceKernel::Euclid) {
    if (!(tau > 0.0)) throw std::invalid_argument("soft_assign: tau must be positive");
    if (!energies.all_finite()) throw std::invalid_argument("soft_assign: non-finite energy");
    AssignmentMatrix out;
    out.tau = tau;
    out.kernel = kernel;
    out.probs = Matrix(energies.rows(), energies.cols());
    std::vector<double> logits(energies.cols());
    for (std::size_t t = 0; t < energies.rows(); ++t) {
        for (std::size_t k = 0; k < energies.cols(); ++k) logits[k] = -energies(t, k) / tau;
        const double lse = logsumexp(logits);
        for (std::size_t k = 0; k < energies.cols(); ++k)
            out.probs(t, k) = std::exp(logits[k] - lse);
    }
    out.distances = std::move(energies);
    return out;
}

inline AssignmentMatrix soft_assign(const LatentBatch& batch, const Codebook& cb, double tau,
                                    DistanceKernel kernel) {
    return soft_assign(pairwise_energy(batch, cb, kernel), tau, kernel);
}

// Linear per-epoch temperature decay.
struct AnnealSchedule {
    double tau_start = 1.0;
    double tau_end = 0.1;
    std::size_t total_epochs = 1;

    AnnealSchedule() = default;
    AnnealSchedule(double start, double end, std::size_t epochs)
        : tau_start(start), tau_end(end), total_epochs(epochs) {
        if (!(tau_end > 0.0) || !(tau_start >= tau_end))
            throw std::invalid_argument("AnnealSchedule: need tau_start >= tau_end > 0");
        if (epochs < 1) throw std::invalid_argument("AnnealSchedule: total_epochs must be >= 1");
    }

    static AnnealSchedule constant(double tau, std::size_t epochs) {
        return AnnealSchedule(tau, tau, epochs);
    }
};

// tau(e) = tau_start + (tau_end - tau_start) * (e-1)/(E-1), e in [1, E].
// Endpoints are returned verbatim so tau(1) and tau(E) are bit-exact.
inline double tau_at_epoch(const AnnealSchedule& sched, std::size_t epoch) {
    if (epoch < 1 || epoch > sched.total_epochs)
        throw std::invalid_argument("tau_at_epoch: epoch " + std::to_string(epoch) +
                                    " outside [1, " + std::to_string(sched.total_epochs) + "]");
    if (epoch == 1 || sched.total_epochs == 1) return sched.tau_start;
    if (epoch == sched.total_epochs) return sched.tau_end;
    const double frac = static_cast<double>(epoch - 1) / static_cast<double>(sched.total_epochs - 1);
    return sched.tau_start + (sched.tau_end - sched.tau_start) * frac;
}

namespace detail {

// Direction u_k = -dE_k/dc_k: the unit vector (z-c_k)/d_k for the unsquared
// kernel, 2(z-c_k) for the squared one. For the unsquared kernel d_k = 0 is
// a genuine singularity.
inline void kernel_directions(std::span<const double> z, const Codebook& cb,
                              std::span<const double> energies, DistanceKernel kernel,
                              Matrix& dirs) {
    const std::size_t K = cb.K(), C = cb.C();
    for (std::size_t k = 0; k < K; ++k) {
        if (kernel == DistanceKernel::Euclid) {
            const double d = energies[k];
            if (d == 0.0)
                throw SingularityError("assignment Jacobian undefined: token lies exactly on "
                                       "center " + std::to_string(k));
            for (std::size_t c = 0; c < C; ++c) dirs(k, c) = (z[c] - cb.centers()(k, c)) / d;
        } else {
            for (std::size_t c = 0; c < C; ++c) dirs(k, c) = 2.0 * (z[c] - cb.centers()(k, c));
        }
    }
}

}  // namespace detail

// Analytic Jacobian dp_k/dz, one row per code:
//   grad_z p_k = (p_k/tau) * (-u_k + sum_j p_j u_j).
inline Matrix grad_probs_wrt_latent(std::span<const double> z, const Codebook& cb, double tau,
                                    DistanceKernel kernel) {
    if (z.size() != cb.C()) throw std::invalid_argument("grad_probs_wrt_latent: dim mismatch");
    const std::size_t K = cb.K(), C = cb.C();
    std::vector<double> energies(K);
    for (std::size_t k = 0; k < K; ++k)
        energies[k] = token_energy(z, cb.centers().row(k), kernel);
    Matrix e = Matrix::from_data(1, K, energies);
    const AssignmentMatrix assign = soft_assign(std::move(e), tau, kernel);

    Matrix dirs(K, C);
    detail::kernel_directions(z, cb, energies, kernel, dirs);
    std::vector<double> mean_dir(C, 0.0);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t c = 0; c < C; ++c) mean_dir[c] += assign.probs(0, k) * dirs(k, c);

    Matrix jac(K, C);
    for (std::size_t k = 0; k < K; ++k) {
        const double scale = assign.probs(0, k) / tau;
        for (std::size_t c = 0; c < C; ++c) jac(k, c) = scale * (mean_dir[c] - dirs(k, c));
    }
    return jac;
}

// Analytic Jacobian dp_k/dc_j for all k at fixed j, one row per code:
//   dp_k/dc_j = (p_k/tau) * (delta_kj - p_j) * u_j.
inline Matrix grad_probs_wrt_center(std::span<const double> z, const Codebook& cb, double tau,
                                    DistanceKernel kernel, std::size_t j) {
    if (z.size() != cb.C()) throw std::invalid_argument("grad_probs_wrt_center: dim mismatch");
    if (j >= cb.K()) throw std::invalid_argument("grad_probs_wrt_center: center index out of range");
    const std::size_t K = cb.K(), C = cb.C();
    std::vector<double> energies(K);
    for (std::size_t k = 0; k < K; ++k)
        energies[k] = token_energy(z, cb.centers().row(k), kernel);
    const AssignmentMatrix assign =
        soft_assign(Matrix::from_data(1, K, energies), tau, kernel);

    Matrix dirs(K, C);
    detail::kernel_directions(z, cb, energies, kernel, dirs);

    Matrix jac(K, C);
    const double pj = assign.probs(0, j);
    for (std::size_t k = 0; k < K; ++k) {
        const double delta = (k == j) ? 1.0 : 0.0;
        const double scale = assign.probs(0, k) / tau * (delta - pj);
        for (std::size_t c = 0; c < C; ++c) jac(k, c) = scale * dirs(j, c);
    }
    return jac;
}

struct ProbBackprop {
    Matrix grad_tokens;   // T x C
    Matrix grad_centers;  // K x C
};

// Chain rule through the assignment probabilities: given H = dL/dp (T x K),
// accumulate dL/dz_t and dL/dc_j. Uses the fused per-token forms
//   dL/dz_t  = (1/tau) * (A_t * ubar_t - sum_k a_{t,k} u_{t,k})
//   dL/dc_j += (1/tau) * (a_{t,j} - p_{t,j} A_t) * u_{t,j}
// with a_{t,k} = H_{t,k} p_{t,k}, A_t = sum_k a_{t,k}, ubar_t = sum_k p u.
inline ProbBackprop backprop_through_probs(const Matrix& h, const LatentBatch& batch,
                                           const Codebook& cb, const AssignmentMatrix& assign) {
    const std::size_t T = batch.count(), K = cb.K(), C = cb.C();
    if (h.rows() != T || h.cols() != K)
        throw std::invalid_argument("backprop_through_probs: dL/dp shape mismatch");
    if (assign.tokens() != T || assign.codes() != K)
        throw std::invalid_argument("backprop_through_probs: assignment shape mismatch");
    ProbBackprop out{Matrix(T, C), Matrix(K, C)};
    Matrix dirs(K, C);
    std::vector<double> mean_dir(C);
    for (std::size_t t = 0; t < T; ++t) {
        detail::kernel_directions(batch.tokens.row(t), cb, assign.distances.row(t), assign.kernel,
                                  dirs);
        std::fill(mean_dir.begin(), mean_dir.end(), 0.0);
        double a_sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            const double p = assign.probs(t, k);
            const double a = h(t, k) * p;
            a_sum += a;
            for (std::size_t c = 0; c < C; ++c) mean_dir[c] += p * dirs(k, c);
        }
        for (std::size_t c = 0; c < C; ++c) out.grad_tokens(t, c) = a_sum * mean_dir[c];
        for (std::size_t k = 0; k < K; ++k) {
            const double p = assign.probs(t, k);
            const double a = h(t, k) * p;
            const double center_scale = (a - p * a_sum) / assign.tau;
            for (std::size_t c = 0; c < C; ++c) {
                out.grad_tokens(t, c) -= a * dirs(k, c);
                out.grad_centers(k, c) += center_scale * dirs(k, c);
            }
        }
        for (std::size_t c = 0; c < C; ++c) out.grad_tokens(t, c) /= assign.tau;
    }
    return out;
}

}  // namespace lgq
