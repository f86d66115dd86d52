#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "primo/tensor.hpp"

namespace primo {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> stride_a; // per output axis; 0 on broadcast axes
    std::vector<std::size_t> stride_b;
    bool same = false;
};

inline std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out)
{
    const std::size_t rank = out.size();
    const std::size_t offset = rank - in.size();
    std::vector<std::size_t> strides(rank, 0);
    std::size_t running = 1;
    for (std::size_t k = in.size(); k-- > 0;) {
        strides[k + offset] = in[k] == 1 ? 0 : running;
        running *= in[k];
    }
    return strides;
}

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op)
{
    BroadcastPlan plan;
    if (a == b) {
        plan.out = a;
        plan.same = true;
        return plan;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    plan.out.assign(rank, 1);
    for (std::size_t k = 0; k < rank; ++k) {
        const std::size_t da = k + a.size() >= rank ? a[k + a.size() - rank] : 1;
        const std::size_t db = k + b.size() >= rank ? b[k + b.size() - rank] : 1;
        if (da != db && da != 1 && db != 1)
            throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                                 " are not broadcast-compatible");
        plan.out[k] = std::max(da, db);
    }
    plan.stride_a = aligned_strides(a, plan.out);
    plan.stride_b = aligned_strides(b, plan.out);
    return plan;
}

template <class F>
void broadcast_for_each(const BroadcastPlan& plan, F&& f)
{
    const std::size_t n = shape_size(plan.out);
    if (plan.same) {
        for (std::size_t i = 0; i < n; ++i)
            f(i, i, i);
        return;
    }
    const std::size_t rank = plan.out.size();
    std::vector<std::size_t> index(rank, 0);
    std::size_t ia = 0;
    std::size_t ib = 0;
    for (std::size_t o = 0; o < n; ++o) {
        f(o, ia, ib);
        for (std::size_t d = rank; d-- > 0;) {
            ++index[d];
            ia += plan.stride_a[d];
            ib += plan.stride_b[d];
            if (index[d] < plan.out[d])
                break;
            ia -= plan.stride_a[d] * plan.out[d];
            ib -= plan.stride_b[d] * plan.out[d];
            index[d] = 0;
        }
    }
}

// da/db receive (x, y, out) and return the local partial derivative.
template <class Fwd, class Da, class Db>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Da da, Db db)
{
    BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), name);
    std::vector<double> out(shape_size(plan.out));
    {
        const auto& av = a.values();
        const auto& bv = b.values();
        broadcast_for_each(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = fwd(av[i], bv[j]); });
    }
    Shape out_shape = plan.out;
    return Tensor::make_result(std::move(out_shape), std::move(out), {a, b},
                               [plan = std::move(plan), da, db](Node& self) {
                                   Node& A = *self.parents[0];
                                   Node& B = *self.parents[1];
                                   if (A.requires_grad) {
                                       auto& ga = A.ensure_grad();
                                       broadcast_for_each(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
                                           ga[i] += self.grad[o] * da(A.value[i], B.value[j], self.value[o]);
                                       });
                                   }
                                   if (B.requires_grad) {
                                       auto& gb = B.ensure_grad();
                                       broadcast_for_each(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
                                           gb[j] += self.grad[o] * db(A.value[i], B.value[j], self.value[o]);
                                       });
                                   }
                               });
}

// d receives (x, out).
template <class Fwd, class D>
Tensor unary_op(const Tensor& a, Fwd fwd, D d)
{
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i)
        out[i] = fwd(av[i]);
    return Tensor::make_result(a.shape(), std::move(out), {a}, [d](Node& self) {
        Node& A = *self.parents[0];
        auto& ga = A.ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] += self.grad[i] * d(A.value[i], self.value[i]);
    });
}

inline void require_rank2(const Tensor& t, const char* op)
{
    if (t.rank() != 2)
        throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(t.shape()));
}

inline double stable_softplus(double x) noexcept
{
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) noexcept
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b)
{
    return detail::binary_op(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b)
{
    return detail::binary_op(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b)
{
    return detail::binary_op(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b)
{
    return detail::binary_op(
        a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double out) { return -out / y; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

inline Tensor scale(const Tensor& a, double c)
{
    return detail::unary_op(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& a, double c)
{
    return detail::unary_op(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

inline Tensor relu(const Tensor& a)
{
    return detail::unary_op(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor tanh(const Tensor& a)
{
    return detail::unary_op(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp(const Tensor& a)
{
    return detail::unary_op(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// Natural log; throws DomainError on any non-positive entry.
inline Tensor log(const Tensor& a)
{
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!(a.data()[i] > 0.0))
            throw DomainError("log: non-positive input " + std::to_string(a.data()[i]) + " at index " +
                              std::to_string(i));
    return detail::unary_op(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor sqrt(const Tensor& a)
{
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!(a.data()[i] >= 0.0))
            throw DomainError("sqrt: negative input at index " + std::to_string(i));
    return detail::unary_op(
        a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Tensor square(const Tensor& a)
{
    return detail::unary_op(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Tensor softplus(const Tensor& a)
{
    return detail::unary_op(a, detail::stable_softplus, [](double x, double) { return detail::sigmoid(x); });
}

inline Tensor sigmoid(const Tensor& a)
{
    return detail::unary_op(a, detail::sigmoid, [](double, double y) { return y * (1.0 - y); });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b)
{
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    std::vector<double> out(m * n);
    {
        detail::ConstMatrixMap A(a.data().data(), Eigen::Index(m), Eigen::Index(k));
        detail::ConstMatrixMap B(b.data().data(), Eigen::Index(k), Eigen::Index(n));
        detail::MatrixMap C(out.data(), Eigen::Index(m), Eigen::Index(n));
        C.noalias() = A * B;
    }
    return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        detail::Node& A = *self.parents[0];
        detail::Node& B = *self.parents[1];
        detail::ConstMatrixMap G(self.grad.data(), Eigen::Index(m), Eigen::Index(n));
        if (A.requires_grad) {
            detail::MatrixMap GA(A.ensure_grad().data(), Eigen::Index(m), Eigen::Index(k));
            detail::ConstMatrixMap BV(B.value.data(), Eigen::Index(k), Eigen::Index(n));
            GA.noalias() += G * BV.transpose();
        }
        if (B.requires_grad) {
            detail::MatrixMap GB(B.ensure_grad().data(), Eigen::Index(k), Eigen::Index(n));
            detail::ConstMatrixMap AV(A.value.data(), Eigen::Index(m), Eigen::Index(k));
            GB.noalias() += AV.transpose() * G;
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions

/// Sum of all entries as a scalar tensor.
inline Tensor sum(const Tensor& a)
{
    double total = 0.0;
    for (double v : a.data())
        total += v;
    return Tensor::make_result({}, {total}, {a}, [](detail::Node& self) {
        auto& ga = self.parents[0]->ensure_grad();
        const double g = self.grad[0];
        for (double& v : ga)
            v += g;
    });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

/// Rank-2 reduction keeping the reduced axis: axis 0 -> [1 x n], axis 1 -> [m x 1].
inline Tensor sum_axis(const Tensor& a, std::size_t axis)
{
    detail::require_rank2(a, "sum_axis");
    if (axis > 1)
        throw DimensionError("sum_axis: axis must be 0 or 1");
    const std::size_t m = a.rows(), n = a.cols();
    const auto& v = a.values();
    Shape shape = axis == 0 ? Shape{1, n} : Shape{m, 1};
    std::vector<double> out(axis == 0 ? n : m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[axis == 0 ? j : i] += v[i * n + j];
    return Tensor::make_result(std::move(shape), std::move(out), {a}, [m, n, axis](detail::Node& self) {
        auto& ga = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                ga[i * n + j] += self.grad[axis == 0 ? j : i];
    });
}

inline Tensor mean_axis(const Tensor& a, std::size_t axis)
{
    const double count = static_cast<double>(a.dim(axis));
    return scale(sum_axis(a, axis), 1.0 / count);
}

/// Row-wise log-softmax of a rank-2 tensor, stabilised by max subtraction.
inline Tensor log_softmax(const Tensor& a)
{
    detail::require_rank2(a, "log_softmax");
    const std::size_t m = a.rows(), n = a.cols();
    const auto& v = a.values();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = v.data() + i * n;
        const double top = *std::max_element(row, row + n);
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            acc += std::exp(row[j] - top);
        const double lse = top + std::log(acc);
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = row[j] - lse;
    }
    return Tensor::make_result({m, n}, std::move(out), {a}, [m, n](detail::Node& self) {
        auto& ga = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                gsum += self.grad[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                ga[i * n + j] += self.grad[i * n + j] - std::exp(self.value[i * n + j]) * gsum;
        }
    });
}

inline Tensor softmax(const Tensor& a) { return exp(log_softmax(a)); }

// ---------------------------------------------------------------------------
// Structural

/// Column-wise concatenation of rank-2 tensors with equal row counts.
inline Tensor concat_cols(const std::vector<Tensor>& parts)
{
    if (parts.empty())
        throw DimensionError("concat_cols: no inputs");
    const std::size_t m = parts.front().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_cols");
        if (p.rows() != m)
            throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                                 shape_str(p.shape()));
        widths.push_back(p.cols());
        total += p.cols();
    }
    std::vector<double> out(m * total);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(p.data().data() + i * w, w, out.data() + i * total + offset);
        offset += w;
    }
    return Tensor::make_result({m, total}, std::move(out), parts, [m, total, widths](detail::Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            detail::Node& P = *self.parents[k];
            const std::size_t w = widths[k];
            if (P.requires_grad) {
                auto& gp = P.ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                        gp[i * w + j] += self.grad[i * total + off + j];
            }
            off += w;
        }
    });
}

/// Columns [begin, end) of a rank-2 tensor.
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end)
{
    detail::require_rank2(a, "slice_cols");
    const std::size_t m = a.rows(), n = a.cols();
    if (begin > end || end > n)
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") outside " + shape_str(a.shape()));
    const std::size_t w = end - begin;
    std::vector<double> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(a.data().data() + i * n + begin, w, out.data() + i * w);
    return Tensor::make_result({m, w}, std::move(out), {a}, [m, n, w, begin](detail::Node& self) {
        auto& ga = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
                ga[i * n + begin + j] += self.grad[i * w + j];
    });
}

/// Tiles a [1 x n] tensor into [count x n].
inline Tensor repeat_rows(const Tensor& a, std::size_t count)
{
    detail::require_rank2(a, "repeat_rows");
    if (a.rows() != 1)
        throw DimensionError("repeat_rows: expected a single row, got " + shape_str(a.shape()));
    const std::size_t n = a.cols();
    std::vector<double> out(count * n);
    for (std::size_t i = 0; i < count; ++i)
        std::copy_n(a.data().data(), n, out.data() + i * n);
    return Tensor::make_result({count, n}, std::move(out), {a}, [count, n](detail::Node& self) {
        auto& ga = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < n; ++j)
                ga[j] += self.grad[i * n + j];
    });
}

} // namespace primo
