#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace normprod {

using Table = Eigen::ArrayXd;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Base error type; everything thrown by this library derives from it.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid inputs: shape mismatches, out-of-range indices, malformed files.
struct ValidationError : Error {
    using Error::Error;
};

/// Runtime numerical failure: NaN detected, infeasible model, solver stall.
struct NumericError : Error {
    using Error::Error;
};

/// log(sum_k exp(v_k)) with max subtraction. -inf entries drop out;
/// returns -inf when all entries are -inf.
inline double log_sum_exp(const Table& v) {
    double m = kNegInf;
    for (Eigen::Index k = 0; k < v.size(); ++k)
        if (v[k] > m) m = v[k];
    if (m == kNegInf) return kNegInf;
    double s = 0.0;
    for (Eigen::Index k = 0; k < v.size(); ++k)
        if (v[k] != kNegInf) s += std::exp(v[k] - m);
    return m + std::log(s);
}

/// Streaming accumulator for s * log(sum exp(v/s)), the log-domain
/// L_{1/s} norm. Scale s == 0 degenerates to the max (L_inf limit).
class ScaledLse {
public:
    explicit ScaledLse(double scale) : scale_(scale) {}

    void add(double v) {
        if (v == kNegInf) return;
        if (scale_ == 0.0) {
            if (v > best_) best_ = v;
            return;
        }
        if (v > best_) {
            sum_ = (best_ == kNegInf) ? 1.0 : sum_ * std::exp((best_ - v) / scale_) + 1.0;
            best_ = v;
        } else {
            sum_ += std::exp((v - best_) / scale_);
        }
    }

    double value() const {
        if (best_ == kNegInf) return kNegInf;
        if (scale_ == 0.0) return best_;
        return best_ + scale_ * std::log(sum_);
    }

    bool empty() const { return best_ == kNegInf; }

private:
    double scale_;
    double best_ = kNegInf;
    double sum_ = 0.0;  // sum of exp((v - best_)/scale_), including the best term
};

/// s * log(sum_k exp(v_k / s)) over a whole table.
inline double scaled_log_sum_exp(const Table& v, double scale) {
    ScaledLse acc(scale);
    for (Eigen::Index k = 0; k < v.size(); ++k) acc.add(v[k]);
    return acc.value();
}

/// Entropy -sum b ln b of a normalized table given in log domain,
/// with the 0 ln 0 = 0 convention.
inline double entropy_from_log(const Table& log_b) {
    double h = 0.0;
    for (Eigen::Index k = 0; k < log_b.size(); ++k) {
        if (log_b[k] == kNegInf) continue;
        h -= std::exp(log_b[k]) * log_b[k];
    }
    return h;
}

/// Row-major addressing of a table over a sorted variable scope;
/// the last scope position varies fastest.
struct TableLayout {
    std::vector<int> sizes;
    std::vector<std::int64_t> strides;
    std::int64_t total = 1;

    static TableLayout make(const std::vector<int>& sizes_in) {
        TableLayout t;
        t.sizes = sizes_in;
        t.strides.assign(sizes_in.size(), 1);
        for (int p = static_cast<int>(sizes_in.size()) - 2; p >= 0; --p)
            t.strides[p] = t.strides[p + 1] * sizes_in[p + 1];
        t.total = sizes_in.empty() ? 1 : t.strides[0] * sizes_in[0];
        return t;
    }

    int coord(std::int64_t flat, int pos) const {
        return static_cast<int>((flat / strides[pos]) % sizes[pos]);
    }

    std::int64_t flat_of(const std::vector<int>& states) const {
        std::int64_t f = 0;
        for (std::size_t p = 0; p < sizes.size(); ++p) f += states[p] * strides[p];
        return f;
    }
};

}  // namespace normprod
