#pragma once

// Deterministic RNG, small dense containers, stable softmax helpers and a
// central-difference gradient oracle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rdbcl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a value that must stay finite became NaN or Inf.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace detail

/** Counter-based splittable generator.
 *
 * Output i of a stream is mix64(key + i * golden) where the key is derived
 * from (seed, stream_id). Two generators with the same seed, stream id and
 * call sequence produce the same numbers everywhere. `split` derives a child
 * stream without touching the parent's counter. */
class Rng {
public:
    Rng(std::uint64_t seed = 0, std::uint64_t stream_id = 0)
        : seed_(seed), stream_(stream_id),
          key_(detail::mix64(seed ^ detail::mix64(stream_id + 0x632BE59BD9B4E019ULL))) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }

    std::uint64_t next_u64() {
        ++counter_;
        return detail::mix64(key_ + counter_ * detail::kGolden);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Uses rejection so the result is unbiased.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw Error("Rng::below: empty range");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal draw (Box-Muller, one value per call).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Child stream keyed by `sub`; the parent state is not modified.
    Rng split(std::uint64_t sub) const {
        return Rng(seed_, detail::mix64(stream_ * 0xD1342543DE82EF95ULL + sub + 1));
    }

    Rng split(std::initializer_list<std::uint64_t> path) const {
        Rng r = *this;
        for (auto p : path) r = r.split(p);
        return r;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

inline bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline void require_finite(std::span<const double> v, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            std::ostringstream os;
            os << what << ": non-finite value at index " << i;
            throw NonFiniteError(os.str());
        }
    }
}

/// Dense vector of doubles whose public mutators keep every entry finite.
class DenseVector {
public:
    DenseVector() = default;
    explicit DenseVector(std::size_t n, double fill = 0.0) : data_(n, fill) {
        require_finite(data_, "DenseVector");
    }
    explicit DenseVector(std::vector<double> data) : data_(std::move(data)) {
        require_finite(data_, "DenseVector");
    }

    std::size_t size() const { return data_.size(); }
    double operator[](std::size_t i) const { return data_[i]; }
    std::span<const double> view() const { return data_; }
    const std::vector<double>& values() const { return data_; }

    void set(std::size_t i, double v) {
        if (!std::isfinite(v)) throw NonFiniteError("DenseVector::set: non-finite value");
        data_.at(i) = v;
    }
    /// this += alpha * other
    void axpy(double alpha, std::span<const double> other) {
        if (other.size() != data_.size()) throw Error("DenseVector::axpy: dimension mismatch");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * other[i];
        require_finite(data_, "DenseVector::axpy");
    }
    double dot(std::span<const double> other) const {
        if (other.size() != data_.size()) throw Error("DenseVector::dot: dimension mismatch");
        double s = 0.0;
        for (std::size_t i = 0; i < data_.size(); ++i) s += data_[i] * other[i];
        return s;
    }

private:
    std::vector<double> data_;
};

/// Row-major read-only matrix view over borrowed storage.
struct ConstMatrixView {
    std::span<const double> data;
    std::size_t rows = 0;
    std::size_t cols = 0;

    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return data.subspan(r * cols, cols); }
};

/// Row-major mutable matrix view over borrowed storage.
struct MatrixView {
    std::span<double> data;
    std::size_t rows = 0;
    std::size_t cols = 0;

    double& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) const { return data.subspan(r * cols, cols); }
    operator ConstMatrixView() const { return {data, rows, cols}; }
};

/// Owning dense matrix, row-major.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {
        require_finite(data_, "DenseMatrix");
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    void set(std::size_t r, std::size_t c, double v) {
        if (!std::isfinite(v)) throw NonFiniteError("DenseMatrix::set: non-finite value");
        if (r >= rows_ || c >= cols_) throw Error("DenseMatrix::set: index out of range");
        data_[r * cols_ + c] = v;
    }
    ConstMatrixView view() const { return {data_, rows_, cols_}; }
    std::span<const double> row(std::size_t r) const { return view().row(r); }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// out = m * x + bias
inline void matvec(ConstMatrixView m, std::span<const double> x, std::span<const double> bias,
                   std::span<double> out) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const auto row = m.row(r);
        double s = bias.empty() ? 0.0 : bias[r];
        for (std::size_t c = 0; c < m.cols; ++c) s += row[c] * x[c];
        out[r] = s;
    }
}

/// out += m^T * y
inline void matvec_transposed_acc(ConstMatrixView m, std::span<const double> y, std::span<double> out) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double yr = y[r];
        if (yr == 0.0) continue;
        const auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) out[c] += yr * row[c];
    }
}

/// m += y x^T
inline void add_outer(MatrixView m, std::span<const double> y, std::span<const double> x) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double yr = y[r];
        if (yr == 0.0) continue;
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) row[c] += yr * x[c];
    }
}

inline double log_sum_exp(std::span<const double> x) {
    if (x.empty()) throw Error("log_sum_exp: empty input");
    require_finite(x, "log_sum_exp");
    const double m = *std::max_element(x.begin(), x.end());
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

/// Numerically stable log-softmax (max subtraction).
inline std::vector<double> log_softmax(std::span<const double> logits) {
    const double lse = log_sum_exp(logits);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
    auto out = log_softmax(logits);
    for (double& v : out) v = std::exp(v);
    return out;
}

/// |a - b| / max(1, |a|, |b|)
inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline double max_relative_error(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("max_relative_error: dimension mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i]));
    return worst;
}

using ScalarFn = std::function<double(std::span<const double>)>;

/** Central-difference gradient of `f` at `theta`.
 *
 * g_k = (f(theta + h e_k) - f(theta - h e_k)) / (2h). Throws if any
 * evaluation is non-finite, naming the coordinate. */
inline std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> theta,
                                            double h = 1e-5) {
    if (!(h > 0.0)) throw Error("finite_diff_grad: step must be positive");
    std::vector<double> x(theta.begin(), theta.end());
    std::vector<double> g(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double orig = x[k];
        x[k] = orig + h;
        const double fp = f(x);
        x[k] = orig - h;
        const double fm = f(x);
        x[k] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            std::ostringstream os;
            os << "finite_diff_grad: non-finite function value at coordinate " << k;
            throw NonFiniteError(os.str());
        }
        g[k] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// FNV-1a over the raw bytes of a double sequence; used for checkpoint hashes.
inline std::uint64_t hash_doubles(std::span<const double> v) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (double d : v) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(d));
        std::memcpy(&bits, &d, sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xFF;
            h *= 0x100000001B3ULL;
        }
    }
    return h;
}

inline double mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Population standard deviation.
inline double stddev(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

} // namespace rdbcl
