// Deterministic numeric substrate: seeded RNG, dense row-major f64 matrices,
// stabilized log-sum-exp and a central-difference gradient checker.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace lgq {

inline bool is_finite(double x) { return std::isfinite(x); }

// Dense row-major matrix of doubles. Constructors reject NaN/Inf unless the
// caller explicitly opts in; all core math in this project is f64.
class Matrix {
public:
    Matrix() : rows_(0), cols_(0) {}

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {
        if (!is_finite(fill)) throw std::invalid_argument("Matrix: non-finite fill value");
    }

    static Matrix from_data(std::size_t rows, std::size_t cols, std::vector<double> data,
                            bool allow_nonfinite = false) {
        if (data.size() != rows * cols)
            throw std::invalid_argument("Matrix: data length " + std::to_string(data.size()) +
                                        " != rows*cols " + std::to_string(rows * cols));
        Matrix m;
        m.rows_ = rows;
        m.cols_ = cols;
        m.data_ = std::move(data);
        if (!allow_nonfinite) {
            for (std::size_t i = 0; i < m.data_.size(); ++i)
                if (!is_finite(m.data_[i]))
                    throw std::invalid_argument("Matrix: non-finite entry at flat index " +
                                                std::to_string(i));
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : data_)
            if (!is_finite(v)) return false;
        return true;
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_, cols_;
    std::vector<double> data_;
};

// A batch of T latent tokens in R^C, stored as a T x C matrix.
struct LatentBatch {
    Matrix tokens;

    LatentBatch() = default;
    explicit LatentBatch(Matrix m) : tokens(std::move(m)) {}

    std::size_t count() const { return tokens.rows(); }
    std::size_t dim() const { return tokens.cols(); }
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    }
    return out;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seeded PRNG. The generator is std::mt19937_64, which the standard pins
// bit-exactly; uniform and normal variates are derived here by explicit
// arithmetic instead of std::*_distribution (whose streams are
// implementation-defined). Normal draws use the Marsaglia polar transform,
// so the only platform dependence left is libm's log/sqrt.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // Independent stream derived from (seed, tag); does not consume this
    // generator's state, so split order never matters.
    Rng split(std::uint64_t tag) const { return Rng(splitmix64(seed_ ^ splitmix64(tag))); }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Marsaglia's polar method; pairs are cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// log(sum(exp(v))) via max shift; exact for single-element input.
inline double logsumexp(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("logsumexp: empty input");
    double m = v[0];
    for (double x : v) {
        if (!is_finite(x)) throw std::invalid_argument("logsumexp: non-finite input");
        m = std::max(m, x);
    }
    if (v.size() == 1) return v[0];
    double acc = 0.0;
    for (double x : v) acc += std::exp(x - m);
    return m + std::log(acc);
}

constexpr double kDefaultFdStep = 1e-5;

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
// This is the gradient oracle every analytic Jacobian in the project is
// checked against; it must stay independent of those code paths.
inline std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                            std::span<const double> x,
                                            double h = kDefaultFdStep) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: step must be positive");
    std::vector<double> xs(x.begin(), x.end());
    std::vector<double> grad(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double xi = xs[i];
        xs[i] = xi + h;
        const double fp = f(xs);
        xs[i] = xi - h;
        const double fm = f(xs);
        xs[i] = xi;
        if (!is_finite(fp) || !is_finite(fm))
            throw std::runtime_error("finite_diff_grad: non-finite f at coordinate " +
                                     std::to_string(i));
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

// Relative gradient error with a unit-scale floor, reported per coordinate:
// |a-b| / max(1, |a|, |b|). 1e-5 is attainable in f64 but not f32.
inline double max_rel_error(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("max_rel_error: length mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

// Worker-thread cap, LGQ_THREADS env var; 1 means serial.
inline std::size_t thread_cap() {
    if (const char* env = std::getenv("LGQ_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<std::size_t>(n);
    }
    return 1;
}

// Runs fn(begin, end) over [0, n) split into contiguous chunks. Each chunk
// must write disjoint output; results are then independent of the schedule,
// which keeps threaded runs bit-reproducible.
inline void parallel_rows(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    const std::size_t threads = std::min(thread_cap(), n == 0 ? std::size_t{1} : n);
    if (threads <= 1) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back(fn, lo, hi);
    }
    for (auto& th : pool) th.join();
}

}  // namespace lgq
