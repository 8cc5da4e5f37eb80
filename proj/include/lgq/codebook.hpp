// The learnable codebook {c_1..c_K}: initialization schemes, optimizer
// updates, drift tracking against the frozen init snapshot, and a small
// self-describing binary checkpoint format.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgq/numerics.hpp"
#include "lgq/optim.hpp"

namespace lgq {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointVersionError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct CheckpointTruncatedError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct CheckpointShapeError : CheckpointError {
    using CheckpointError::CheckpointError;
};

class Codebook {
public:
    Codebook(std::size_t k, std::size_t c, Matrix centers)
        : k_(k), c_(c), centers_(std::move(centers)) {
        if (k_ < 1 || c_ < 1) throw std::invalid_argument("Codebook: K and C must be >= 1");
        if (centers_.rows() != k_ || centers_.cols() != c_)
            throw std::invalid_argument("Codebook: centers shape mismatch");
        if (!centers_.all_finite()) throw std::invalid_argument("Codebook: non-finite center");
        init_snapshot_ = centers_;
    }

    std::size_t K() const { return k_; }
    std::size_t C() const { return c_; }

    const Matrix& centers() const { return centers_; }
    Matrix& mutable_centers() { return centers_; }
    const Matrix& init_snapshot() const { return init_snapshot_; }
    const std::vector<Matrix>& epoch_snapshots() const { return epoch_snapshots_; }

    void append_epoch_snapshot() { epoch_snapshots_.push_back(centers_); }

    // Used by checkpoint loading, which must restore the frozen snapshot
    // rather than re-freeze the loaded centers.
    void restore_init_snapshot(Matrix snap) {
        if (!snap.same_shape(centers_))
            throw std::invalid_argument("Codebook: init snapshot shape mismatch");
        init_snapshot_ = std::move(snap);
    }

private:
    std::size_t k_, c_;
    Matrix centers_;
    Matrix init_snapshot_;
    std::vector<Matrix> epoch_snapshots_;
};

enum class InitScheme { UniformBox, Gaussian, DataSample };

struct InitConfig {
    InitScheme scheme = InitScheme::UniformBox;
    double lo = -1.0;      // uniform_box
    double hi = 1.0;
    double sigma = 1.0;    // gaussian
};

inline Codebook init_codebook(std::size_t k, std::size_t c, const InitConfig& cfg, Rng& rng) {
    Matrix centers(k, c);
    switch (cfg.scheme) {
        case InitScheme::UniformBox:
            if (!(cfg.lo <= cfg.hi)) throw std::invalid_argument("init_codebook: lo > hi");
            for (double& v : centers.data()) v = rng.uniform(cfg.lo, cfg.hi);
            break;
        case InitScheme::Gaussian:
            if (cfg.sigma < 0.0) throw std::invalid_argument("init_codebook: sigma < 0");
            for (double& v : centers.data()) v = rng.normal(0.0, cfg.sigma);
            break;
        case InitScheme::DataSample:
            throw std::invalid_argument("init_codebook: data_sample needs a batch overload");
    }
    return Codebook(k, c, std::move(centers));
}

// data_sample scheme: K distinct tokens drawn without replacement.
inline Codebook init_codebook(std::size_t k, std::size_t c, const LatentBatch& batch, Rng& rng) {
    if (batch.dim() != c) throw std::invalid_argument("init_codebook: batch dimension mismatch");
    if (batch.count() < k)
        throw std::invalid_argument("init_codebook: data_sample needs at least K tokens, got " +
                                    std::to_string(batch.count()));
    std::vector<std::size_t> ids(batch.count());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    rng.shuffle(ids);
    Matrix centers(k, c);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < c; ++j) centers(i, j) = batch.tokens(ids[i], j);
    return Codebook(k, c, std::move(centers));
}

inline void apply_update(Codebook& cb, const Matrix& grad, Optimizer& opt) {
    if (grad.rows() != cb.K() || grad.cols() != cb.C())
        throw std::invalid_argument("apply_update: gradient shape mismatch");
    opt.step(cb.mutable_centers(), grad);
}

struct DriftReport {
    std::vector<double> per_code_drift;       // ||c_k(now) - c_k(init)||_2
    std::vector<double> per_epoch_mean_step;  // mean |delta| between successive snapshots
};

inline DriftReport drift_report(const Codebook& cb) {
    DriftReport rep;
    rep.per_code_drift.resize(cb.K());
    for (std::size_t k = 0; k < cb.K(); ++k) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cb.C(); ++c) {
            const double d = cb.centers()(k, c) - cb.init_snapshot()(k, c);
            acc += d * d;
        }
        rep.per_code_drift[k] = std::sqrt(acc);
    }
    const auto& snaps = cb.epoch_snapshots();
    for (std::size_t t = 0; t + 1 < snaps.size(); ++t) {
        double acc = 0.0;
        for (std::size_t i = 0; i < snaps[t].size(); ++i)
            acc += std::fabs(snaps[t + 1].data()[i] - snaps[t].data()[i]);
        rep.per_epoch_mean_step.push_back(acc / static_cast<double>(snaps[t].size()));
    }
    return rep;
}

namespace detail {

constexpr char kCkptMagic[8] = {'L', 'G', 'Q', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCkptVersion = 1;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

inline void write_exact(std::FILE* f, const void* p, std::size_t n, const std::string& path) {
    if (std::fwrite(p, 1, n, f) != n)
        throw CheckpointError("checkpoint write failed: " + path);
}

inline void read_exact(std::FILE* f, void* p, std::size_t n, const std::string& path) {
    if (std::fread(p, 1, n, f) != n)
        throw CheckpointTruncatedError("checkpoint truncated: " + path);
}

}  // namespace detail

// Layout: magic[8], version u32, K u64, C u64, n_elems u64 (= 2*K*C),
// centers payload, init_snapshot payload. All integers and doubles are
// little-endian; the payload is raw IEEE-754 f64, so a round-trip is
// bit-exact. (This code assumes a little-endian host, as do the vendored
// libraries.)
inline void save_checkpoint(const Codebook& cb, const std::string& path) {
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "wb"));
    if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
    detail::write_exact(f.get(), detail::kCkptMagic, 8, path);
    const std::uint32_t version = detail::kCkptVersion;
    detail::write_exact(f.get(), &version, sizeof version, path);
    const std::uint64_t k = cb.K(), c = cb.C(), n = 2 * cb.K() * cb.C();
    detail::write_exact(f.get(), &k, sizeof k, path);
    detail::write_exact(f.get(), &c, sizeof c, path);
    detail::write_exact(f.get(), &n, sizeof n, path);
    detail::write_exact(f.get(), cb.centers().data().data(), sizeof(double) * k * c, path);
    detail::write_exact(f.get(), cb.init_snapshot().data().data(), sizeof(double) * k * c, path);
    if (std::fflush(f.get()) != 0) throw CheckpointError("checkpoint flush failed: " + path);
}

inline Codebook load_checkpoint(const std::string& path) {
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[8];
    detail::read_exact(f.get(), magic, 8, path);
    if (std::memcmp(magic, detail::kCkptMagic, 8) != 0)
        throw CheckpointError("not a codebook checkpoint: " + path);
    std::uint32_t version = 0;
    detail::read_exact(f.get(), &version, sizeof version, path);
    if (version != detail::kCkptVersion)
        throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version) +
                                     " in " + path);
    std::uint64_t k = 0, c = 0, n = 0;
    detail::read_exact(f.get(), &k, sizeof k, path);
    detail::read_exact(f.get(), &c, sizeof c, path);
    detail::read_exact(f.get(), &n, sizeof n, path);
    if (k < 1 || c < 1 || n != 2 * k * c)
        throw CheckpointShapeError("checkpoint header shape mismatch (K=" + std::to_string(k) +
                                   ", C=" + std::to_string(c) + ", n=" + std::to_string(n) +
                                   ") in " + path);
    std::vector<double> centers(k * c), snap(k * c);
    detail::read_exact(f.get(), centers.data(), sizeof(double) * k * c, path);
    detail::read_exact(f.get(), snap.data(), sizeof(double) * k * c, path);
    Codebook cb(k, c, Matrix::from_data(k, c, std::move(centers)));
    cb.restore_init_snapshot(Matrix::from_data(k, c, std::move(snap)));
    return cb;
}

}  // namespace lgq
