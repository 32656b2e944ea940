#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "protorel/errors.hpp"
#include "protorel/tensor.hpp"

namespace protorel {

// Op identifiers, used for backward dispatch and for fault injection in
// verification tests.
enum class Op {
    Leaf,
    Constant,
    MatMul,
    Transpose,
    Reshape,
    Add,
    Sub,
    Mul,
    Scale,
    ScalarDiv,
    Square,
    Sqrt,
    Relu,
    Sigmoid,
    Log,
    Exp,
    ConcatLast,
    SumAxis,
    MeanAxis,
    L2NormalizeLast,
    SortLast,
    SliceLast,
    GatherLast,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Constant: return "constant";
        case Op::MatMul: return "matmul";
        case Op::Transpose: return "transpose";
        case Op::Reshape: return "reshape";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::ScalarDiv: return "scalar-divide";
        case Op::Square: return "square";
        case Op::Sqrt: return "sqrt";
        case Op::Relu: return "relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Log: return "log";
        case Op::Exp: return "exp";
        case Op::ConcatLast: return "concat-last";
        case Op::SumAxis: return "sum-axis";
        case Op::MeanAxis: return "mean-axis";
        case Op::L2NormalizeLast: return "l2-normalize";
        case Op::SortLast: return "sort-last";
        case Op::SliceLast: return "slice-last";
        case Op::GatherLast: return "gather-last";
    }
    return "?";
}

// Handle into a Graph's node list.
struct Var {
    std::int32_t id = -1;
};

// Reverse-mode tape over dense double tensors.
//
// Values are computed eagerly as ops are recorded; node creation order is a
// topological order, so backward() is a single reverse sweep that visits each
// node exactly once. Leaves wrap external tensors and accumulate into their
// `grad` member across backward calls; internal node gradients are reset on
// every call.
//
// Broadcasting is limited to scalar-with-tensor on add/sub/mul; everything
// else requires exact shapes.
//
// Not shareable across threads; one Graph per forward/backward execution.
class Graph {
  public:
    // --- node registration ---------------------------------------------

    // Wrap an external tensor. The caller keeps ownership and must keep it
    // alive for the lifetime of the graph. Gradients accumulate into t.grad.
    Var leaf(Tensor& t) {
        if (t.requires_grad && t.grad.size() != t.data.size()) t.grad.assign(t.data.size(), 0.0);
        Node n;
        n.op = Op::Leaf;
        n.ext = &t;
        n.requires_grad = t.requires_grad;
        return push(std::move(n));
    }

    // Copy a tensor in as a non-differentiable constant.
    Var input(const Tensor& t) {
        Node n;
        n.op = Op::Constant;
        n.value = t;
        n.value.requires_grad = false;
        n.value.grad.clear();
        return push(std::move(n));
    }

    Var constant(Tensor t) {
        t.requires_grad = false;
        t.grad.clear();
        Node n;
        n.op = Op::Constant;
        n.value = std::move(t);
        return push(std::move(n));
    }

    Var number(double v) { return constant(Tensor::scalar(v)); }
    Var ones(Shape s) { return constant(Tensor::full(std::move(s), 1.0)); }

    // --- accessors ------------------------------------------------------

    const Tensor& val(Var v) const {
        const Node& n = node(v);
        return n.ext ? *n.ext : n.value;
    }

    double scalar(Var v) const {
        const Tensor& t = val(v);
        if (t.size() != 1)
            throw ShapeError(std::string("expected scalar, got shape ") + shape_str(t.shape));
        return t.data[0];
    }

    std::size_t size() const { return nodes_.size(); }

    // Multiply the output-gradient of every node with the given op by
    // `factor` during backward. Verification hook used by the selfcheck
    // mutation tests; leave unset in normal operation.
    void inject_vjp_fault(Op op, double factor) { vjp_fault_ = {op, factor}; }
    void clear_vjp_fault() { vjp_fault_.reset(); }

    // --- ops -------------------------------------------------------------

    Var matmul(Var av, Var bv) {
        const Tensor& a = val(av);
        const Tensor& b = val(bv);
        if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
            throw ShapeError("matmul shapes do not conform: " + shape_str(a.shape) + " x " +
                             shape_str(b.shape));
        const std::int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
        Tensor out = Tensor::zeros({m, n});
        mm_accum(a.data.data(), b.data.data(), out.data.data(), m, k, n, false);
        return push_op(Op::MatMul, av, bv, std::move(out));
    }

    Var transpose(Var av) {
        const Tensor& a = val(av);
        if (a.rank() != 2)
            throw ShapeError("transpose expects rank-2, got " + shape_str(a.shape));
        const std::int64_t r = a.shape[0], c = a.shape[1];
        Tensor out = Tensor::zeros({c, r});
        for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
        return push_op(Op::Transpose, av, Var{}, std::move(out));
    }

    Var reshape(Var av, Shape s) {
        const Tensor& a = val(av);
        if (numel(s) != a.size())
            throw ShapeError("reshape " + shape_str(a.shape) + " -> " + shape_str(s) +
                             " changes element count");
        Tensor out(std::move(s), a.data);
        return push_op(Op::Reshape, av, Var{}, std::move(out));
    }

    Var add(Var a, Var b) { return binary(Op::Add, a, b); }
    Var sub(Var a, Var b) { return binary(Op::Sub, a, b); }
    Var mul(Var a, Var b) { return binary(Op::Mul, a, b); }

    Var scale(Var av, double c) {
        const Tensor& a = val(av);
        Tensor out = a;
        for (auto& x : out.data) x *= c;
        out.requires_grad = false;
        out.grad.clear();
        Var v = push_op(Op::Scale, av, Var{}, std::move(out));
        node(v).c = c;
        return v;
    }

    Var neg(Var a) { return scale(a, -1.0); }

    // Elementwise division by a scalar tensor (gradient flows to both sides).
    Var scalar_div(Var av, Var sv) {
        const Tensor& a = val(av);
        const Tensor& s = val(sv);
        if (s.size() != 1)
            throw ShapeError("scalar-divide divisor must be scalar, got " + shape_str(s.shape));
        Tensor out = a;
        out.requires_grad = false;
        out.grad.clear();
        const double d = s.data[0];
        for (auto& x : out.data) x /= d;
        return push_op(Op::ScalarDiv, av, sv, std::move(out));
    }

    Var square(Var a) { return unary(Op::Square, a, [](double x) { return x * x; }); }

    Var sqrt_(Var av) {
        const Tensor& a = val(av);
        for (double x : a.data)
            if (x < 0.0)
                throw DomainError("sqrt of negative value " + std::to_string(x));
        return unary(Op::Sqrt, av, [](double x) { return std::sqrt(x); });
    }

    Var relu(Var a) {
        return unary(Op::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; });
    }

    // max(0, x); subgradient 0 at the kink, same as relu.
    Var hinge(Var a) { return relu(a); }

    Var sigmoid(Var a) {
        return unary(Op::Sigmoid, a, [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        });
    }

    Var log_(Var av) {
        const Tensor& a = val(av);
        for (double x : a.data)
            if (x <= 0.0)
                throw DomainError("log of non-positive value " + std::to_string(x));
        return unary(Op::Log, av, [](double x) { return std::log(x); });
    }

    Var exp_(Var a) { return unary(Op::Exp, a, [](double x) { return std::exp(x); }); }

    Var concat_last(Var av, Var bv) {
        const Tensor& a = val(av);
        const Tensor& b = val(bv);
        if (a.rank() != b.rank() || a.rank() < 1)
            throw ShapeError("concat-last rank mismatch: " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
        for (std::int64_t i = 0; i + 1 < a.rank(); ++i)
            if (a.shape[i] != b.shape[i])
                throw ShapeError("concat-last leading dims differ: " + shape_str(a.shape) +
                                 " vs " + shape_str(b.shape));
        const std::int64_t la = a.shape.back(), lb = b.shape.back();
        const std::int64_t rows = a.size() / std::max<std::int64_t>(la, 1);
        Shape s = a.shape;
        s.back() = la + lb;
        Tensor out = Tensor::zeros(std::move(s));
        for (std::int64_t r = 0; r < rows; ++r) {
            std::copy_n(a.data.begin() + r * la, la, out.data.begin() + r * (la + lb));
            std::copy_n(b.data.begin() + r * lb, lb, out.data.begin() + r * (la + lb) + la);
        }
        return push_op(Op::ConcatLast, av, bv, std::move(out));
    }

    Var sum_axis(Var a, std::int64_t axis) { return reduce(Op::SumAxis, a, axis); }
    Var mean_axis(Var a, std::int64_t axis) { return reduce(Op::MeanAxis, a, axis); }

    Var sum_all(Var a) {
        const Tensor& t = val(a);
        if (t.rank() == 0) return a;
        Var flat = t.rank() == 1 ? a : reshape(a, {t.size()});
        return sum_axis(flat, 0);
    }
    Var mean_all(Var a) {
        const Tensor& t = val(a);
        if (t.rank() == 0) return a;
        Var flat = t.rank() == 1 ? a : reshape(a, {t.size()});
        return mean_axis(flat, 0);
    }

    // Normalize each trailing-axis row to unit Euclidean length.
    Var l2_normalize(Var av) {
        const Tensor& a = val(av);
        if (a.rank() < 1)
            throw ShapeError("l2-normalize expects rank >= 1, got " + shape_str(a.shape));
        const std::int64_t len = a.shape.back();
        const std::int64_t rows = a.size() / len;
        Tensor out = Tensor::zeros(a.shape);
        for (std::int64_t r = 0; r < rows; ++r) {
            double ss = 0.0;
            for (std::int64_t j = 0; j < len; ++j) {
                double x = a.data[static_cast<std::size_t>(r * len + j)];
                ss += x * x;
            }
            const double n = std::sqrt(ss);
            if (n == 0.0)
                throw NormalizationError("l2-normalize on zero-norm row " + std::to_string(r));
            for (std::int64_t j = 0; j < len; ++j)
                out.data[static_cast<std::size_t>(r * len + j)] =
                    a.data[static_cast<std::size_t>(r * len + j)] / n;
        }
        return push_op(Op::L2NormalizeLast, av, Var{}, std::move(out));
    }

    // Ascending sort along the last axis. The permutation is saved and the
    // backward pass routes gradients through it unchanged (fixed-permutation
    // subgradient).
    Var sort_last(Var av) {
        const Tensor& a = val(av);
        if (a.rank() < 1)
            throw ShapeError("sort-last expects rank >= 1, got " + shape_str(a.shape));
        const std::int64_t len = a.shape.back();
        const std::int64_t rows = a.size() / len;
        Tensor out = Tensor::zeros(a.shape);
        std::vector<std::int64_t> perm(static_cast<std::size_t>(rows * len));
        std::vector<std::int64_t> order(static_cast<std::size_t>(len));
        for (std::int64_t r = 0; r < rows; ++r) {
            std::iota(order.begin(), order.end(), std::int64_t{0});
            const double* row = a.data.data() + r * len;
            std::stable_sort(order.begin(), order.end(),
                             [row](std::int64_t i, std::int64_t j) { return row[i] < row[j]; });
            for (std::int64_t j = 0; j < len; ++j) {
                perm[static_cast<std::size_t>(r * len + j)] = order[static_cast<std::size_t>(j)];
                out.data[static_cast<std::size_t>(r * len + j)] = row[order[static_cast<std::size_t>(j)]];
            }
        }
        Var v = push_op(Op::SortLast, av, Var{}, std::move(out));
        node(v).idx = std::move(perm);
        return v;
    }

    // Contiguous [start, start+len) selection along the last axis.
    Var slice_last(Var av, std::int64_t start, std::int64_t len) {
        const Tensor& a = val(av);
        if (a.rank() < 1)
            throw ShapeError("slice-last expects rank >= 1, got " + shape_str(a.shape));
        const std::int64_t width = a.shape.back();
        if (start < 0 || len < 0 || start + len > width)
            throw ShapeError("slice-last [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of range for " +
                             shape_str(a.shape));
        const std::int64_t rows = a.size() / width;
        Shape s = a.shape;
        s.back() = len;
        Tensor out = Tensor::zeros(std::move(s));
        for (std::int64_t r = 0; r < rows; ++r)
            std::copy_n(a.data.begin() + r * width + start, len, out.data.begin() + r * len);
        Var v = push_op(Op::SliceLast, av, Var{}, std::move(out));
        node(v).i0 = start;
        node(v).i1 = len;
        return v;
    }

    // Pick one element per trailing-axis row; drops the last axis. Indices
    // are data, not graph values: the backward pass scatters into the picked
    // positions only.
    Var gather_last(Var av, const std::vector<std::int64_t>& indices) {
        const Tensor& a = val(av);
        if (a.rank() < 1)
            throw ShapeError("gather-last expects rank >= 1, got " + shape_str(a.shape));
        const std::int64_t len = a.shape.back();
        const std::int64_t rows = a.size() / len;
        if (static_cast<std::int64_t>(indices.size()) != rows)
            throw ShapeError("gather-last needs one index per row: " +
                             std::to_string(indices.size()) + " indices for " +
                             std::to_string(rows) + " rows");
        Shape s(a.shape.begin(), a.shape.end() - 1);
        Tensor out = Tensor::zeros(std::move(s));
        for (std::int64_t r = 0; r < rows; ++r) {
            const std::int64_t j = indices[static_cast<std::size_t>(r)];
            if (j < 0 || j >= len)
                throw ShapeError("gather-last index " + std::to_string(j) +
                                 " out of range for row width " + std::to_string(len));
            out.data[static_cast<std::size_t>(r)] = a.data[static_cast<std::size_t>(r * len + j)];
        }
        Var v = push_op(Op::GatherLast, av, Var{}, std::move(out));
        node(v).idx = indices;
        return v;
    }

    // --- backward ---------------------------------------------------------

    // Accumulate d(loss)/d(leaf) into every registered leaf tensor's grad.
    // loss must be a single-element tensor. Internal gradients are reset per
    // call; leaf gradients accumulate across calls.
    void backward(Var loss) {
        const Tensor& lt = val(loss);
        if (lt.size() != 1)
            throw ShapeError("backward requires a scalar loss, got shape " + shape_str(lt.shape));
        const std::int32_t last = loss.id;
        for (std::int32_t id = 0; id <= last; ++id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.requires_grad && n.op != Op::Leaf)
                n.grad.assign(static_cast<std::size_t>(n.value.size()), 0.0);
        }
        if (!node(loss).requires_grad) return;  // nothing reachable to update
        grad_of(loss.id)[0] += 1.0;
        for (std::int32_t id = last; id >= 0; --id) backward_node(id);
    }

  private:
    struct Node {
        Op op = Op::Constant;
        std::int32_t a = -1, b = -1;
        Tensor value;          // owned output (unused for leaves)
        Tensor* ext = nullptr; // leaf only
        bool requires_grad = false;
        std::vector<double> grad;
        std::int64_t i0 = 0, i1 = 0;
        double c = 0.0;
        std::vector<std::int64_t> idx;
    };

    std::vector<Node> nodes_;
    std::optional<std::pair<Op, double>> vjp_fault_;

    Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
    const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }

    const Tensor& out_of(std::int32_t id) const {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        return n.ext ? *n.ext : n.value;
    }

    std::vector<double>& grad_of(std::int32_t id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        return n.ext ? n.ext->grad : n.grad;
    }

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    Var push_op(Op op, Var a, Var b, Tensor out) {
        Node n;
        n.op = op;
        n.a = a.id;
        n.b = b.id;
        n.requires_grad = (a.id >= 0 && node(a).requires_grad) ||
                          (b.id >= 0 && node(b).requires_grad);
        out.requires_grad = false;
        out.grad.clear();
        n.value = std::move(out);
        return push(std::move(n));
    }

    template <typename F>
    Var unary(Op op, Var av, F f) {
        const Tensor& a = val(av);
        Tensor out = Tensor::zeros(a.shape);
        for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i]);
        return push_op(op, av, Var{}, std::move(out));
    }

    Var binary(Op op, Var av, Var bv) {
        const Tensor& a = val(av);
        const Tensor& b = val(bv);
        const bool a_scalar = a.size() == 1 && a.rank() == 0;
        const bool b_scalar = b.size() == 1 && b.rank() == 0;
        if (!same_shape(a.shape, b.shape) && !a_scalar && !b_scalar)
            throw ShapeError(std::string(op_name(op)) + " shape mismatch: " + shape_str(a.shape) +
                             " vs " + shape_str(b.shape));
        const Tensor& big = a_scalar ? b : a;
        Tensor out = Tensor::zeros(big.shape);
        const std::size_t n = out.data.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double x = a_scalar ? a.data[0] : a.data[i];
            const double y = b_scalar ? b.data[0] : b.data[i];
            out.data[i] = op == Op::Add ? x + y : op == Op::Sub ? x - y : x * y;
        }
        return push_op(op, av, bv, std::move(out));
    }

    Var reduce(Op op, Var av, std::int64_t axis) {
        const Tensor& a = val(av);
        if (axis < 0 || axis >= a.rank())
            throw ShapeError("reduce axis " + std::to_string(axis) + " out of range for " +
                             shape_str(a.shape));
        std::int64_t outer = 1, inner = 1;
        for (std::int64_t i = 0; i < axis; ++i) outer *= a.shape[i];
        for (std::int64_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape[i];
        const std::int64_t len = a.shape[axis];
        Shape s;
        for (std::int64_t i = 0; i < a.rank(); ++i)
            if (i != axis) s.push_back(a.shape[i]);
        Tensor out = Tensor::zeros(std::move(s));
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t in = 0; in < inner; ++in) {
                double acc = 0.0;
                for (std::int64_t l = 0; l < len; ++l)
                    acc += a.data[static_cast<std::size_t>((o * len + l) * inner + in)];
                out.data[static_cast<std::size_t>(o * inner + in)] =
                    op == Op::MeanAxis ? acc / static_cast<double>(len) : acc;
            }
        Var v = push_op(op, av, Var{}, std::move(out));
        node(v).i0 = axis;
        return v;
    }

    // C += A*B (or A^T*B / A*B^T variants are expressed by the callers via
    // explicit transposes in backward_node). ikj order so the inner loop is
    // contiguous in both B and C.
    static void mm_accum(const double* a, const double* b, double* c, std::int64_t m,
                         std::int64_t k, std::int64_t n, bool /*unused*/) {
        for (std::int64_t i = 0; i < m; ++i) {
            double* crow = c + i * n;
            for (std::int64_t p = 0; p < k; ++p) {
                const double aip = a[i * k + p];
                if (aip == 0.0) continue;
                const double* brow = b + p * n;
                for (std::int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
    }

    void add_into(std::int32_t id, const std::vector<double>& contrib) {
        if (id < 0) return;
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad) return;
        std::vector<double>& g = grad_of(id);
        for (std::size_t i = 0; i < contrib.size(); ++i) g[i] += contrib[i];
    }

    void backward_node(std::int32_t id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad || n.op == Op::Leaf || n.op == Op::Constant) return;

        const std::vector<double>* gp = &n.grad;
        std::vector<double> faulted;
        if (vjp_fault_ && vjp_fault_->first == n.op) {
            faulted = n.grad;
            for (auto& x : faulted) x *= vjp_fault_->second;
            gp = &faulted;
        }
        const std::vector<double>& g = *gp;
        const Tensor& av = n.a >= 0 ? out_of(n.a) : n.value;
        const bool need_a = n.a >= 0 && nodes_[static_cast<std::size_t>(n.a)].requires_grad;
        const bool need_b = n.b >= 0 && nodes_[static_cast<std::size_t>(n.b)].requires_grad;
        if (!need_a && !need_b) return;

        switch (n.op) {
            case Op::MatMul: {
                const Tensor& bv = out_of(n.b);
                const std::int64_t m = av.shape[0], k = av.shape[1], nn = bv.shape[1];
                if (need_a) {
                    // dA = g * B^T
                    std::vector<double> da(static_cast<std::size_t>(m * k), 0.0);
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t p = 0; p < k; ++p) {
                            double acc = 0.0;
                            const double* grow = g.data() + i * nn;
                            const double* brow = bv.data.data() + p * nn;
                            for (std::int64_t j = 0; j < nn; ++j) acc += grow[j] * brow[j];
                            da[static_cast<std::size_t>(i * k + p)] = acc;
                        }
                    add_into(n.a, da);
                }
                if (need_b) {
                    // dB = A^T * g
                    std::vector<double> db(static_cast<std::size_t>(k * nn), 0.0);
                    for (std::int64_t i = 0; i < m; ++i) {
                        const double* arow = av.data.data() + i * k;
                        const double* grow = g.data() + i * nn;
                        for (std::int64_t p = 0; p < k; ++p) {
                            const double aip = arow[p];
                            if (aip == 0.0) continue;
                            double* drow = db.data() + p * nn;
                            for (std::int64_t j = 0; j < nn; ++j) drow[j] += aip * grow[j];
                        }
                    }
                    add_into(n.b, db);
                }
                break;
            }
            case Op::Transpose: {
                const std::int64_t r = av.shape[0], c = av.shape[1];
                std::vector<double> da(static_cast<std::size_t>(r * c), 0.0);
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < c; ++j)
                        da[static_cast<std::size_t>(i * c + j)] = g[static_cast<std::size_t>(j * r + i)];
                add_into(n.a, da);
                break;
            }
            case Op::Reshape:
                add_into(n.a, g);
                break;
            case Op::Add:
            case Op::Sub: {
                const Tensor& bv = out_of(n.b);
                const double sb = n.op == Op::Sub ? -1.0 : 1.0;
                accumulate_broadcast(n.a, av, g, 1.0);
                accumulate_broadcast(n.b, bv, g, sb);
                break;
            }
            case Op::Mul: {
                const Tensor& bv = out_of(n.b);
                const bool a_scalar = av.rank() == 0;
                const bool b_scalar = bv.rank() == 0;
                if (need_a) {
                    if (a_scalar) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < g.size(); ++i)
                            acc += g[i] * (b_scalar ? bv.data[0] : bv.data[i]);
                        add_into(n.a, {acc});
                    } else {
                        std::vector<double> da(g.size());
                        for (std::size_t i = 0; i < g.size(); ++i)
                            da[i] = g[i] * (b_scalar ? bv.data[0] : bv.data[i]);
                        add_into(n.a, da);
                    }
                }
                if (need_b) {
                    if (b_scalar) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < g.size(); ++i)
                            acc += g[i] * (a_scalar ? av.data[0] : av.data[i]);
                        add_into(n.b, {acc});
                    } else {
                        std::vector<double> db(g.size());
                        for (std::size_t i = 0; i < g.size(); ++i)
                            db[i] = g[i] * (a_scalar ? av.data[0] : av.data[i]);
                        add_into(n.b, db);
                    }
                }
                break;
            }
            case Op::Scale: {
                std::vector<double> da(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * n.c;
                add_into(n.a, da);
                break;
            }
            case Op::ScalarDiv: {
                const Tensor& sv = out_of(n.b);
                const double s = sv.data[0];
                if (need_a) {
                    std::vector<double> da(g.size());
                    for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] / s;
                    add_into(n.a, da);
                }
                if (need_b) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av.data[i];
                    add_into(n.b, {-acc / (s * s)});
                }
                break;
            }
            case Op::Square: {
                std::vector<double> da(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * 2.0 * av.data[i];
                add_into(n.a, da);
                break;
            }
            case Op::Sqrt: {
                std::vector<double> da(g.size());
                for (std::size_t i = 0; i < g.size(); ++i)
                    da[i] = g[i] / (2.0 * n.value.data[i]);
                add_into(n.a, da);
                break;
            }
            case Op::Relu: {
                std::vector<double> da(g.size());
                for (std::size_t i = 0; i < g.size(); ++i)
                    da[i] = av.data[i] > 0.0 ? g[i] : 0.0;
                add_into(n.a, da);
                break;
            }
            case Op::Sigmoid: {
                std::vector<double> da(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double y = n.value.data[i];
                    da[i] = g[i] * y * (1.0 - y);
                }
                add_into(n.a, da);
                break;
            }
            case Op::Log: {
                std::vector<double> da(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] / av.data[i];
                add_into(n.a, da);
                break;
            }
            case Op::Exp: {
                std::vector<double> da(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * n.value.data[i];
                add_into(n.a, da);
                break;
            }
            case Op::ConcatLast: {
                const Tensor& bv = out_of(n.b);
                const std::int64_t la = av.shape.back(), lb = bv.shape.back();
                const std::int64_t rows = av.size() / std::max<std::int64_t>(la, 1);
                if (need_a) {
                    std::vector<double> da(static_cast<std::size_t>(av.size()), 0.0);
                    for (std::int64_t r = 0; r < rows; ++r)
                        std::copy_n(g.begin() + r * (la + lb), la, da.begin() + r * la);
                    add_into(n.a, da);
                }
                if (need_b) {
                    std::vector<double> db(static_cast<std::size_t>(bv.size()), 0.0);
                    for (std::int64_t r = 0; r < rows; ++r)
                        std::copy_n(g.begin() + r * (la + lb) + la, lb, db.begin() + r * lb);
                    add_into(n.b, db);
                }
                break;
            }
            case Op::SumAxis:
            case Op::MeanAxis: {
                const std::int64_t axis = n.i0;
                std::int64_t outer = 1, inner = 1;
                for (std::int64_t i = 0; i < axis; ++i) outer *= av.shape[i];
                for (std::int64_t i = axis + 1; i < av.rank(); ++i) inner *= av.shape[i];
                const std::int64_t len = av.shape[axis];
                const double f = n.op == Op::MeanAxis ? 1.0 / static_cast<double>(len) : 1.0;
                std::vector<double> da(static_cast<std::size_t>(av.size()));
                for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t l = 0; l < len; ++l)
                        for (std::int64_t in = 0; in < inner; ++in)
                            da[static_cast<std::size_t>((o * len + l) * inner + in)] =
                                f * g[static_cast<std::size_t>(o * inner + in)];
                add_into(n.a, da);
                break;
            }
            case Op::L2NormalizeLast: {
                const std::int64_t len = av.shape.back();
                const std::int64_t rows = av.size() / len;
                std::vector<double> da(static_cast<std::size_t>(av.size()));
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* x = av.data.data() + r * len;
                    const double* y = n.value.data.data() + r * len;
                    const double* gr = g.data() + r * len;
                    double nrm = 0.0, gy = 0.0;
                    for (std::int64_t j = 0; j < len; ++j) {
                        nrm += x[j] * x[j];
                        gy += gr[j] * y[j];
                    }
                    nrm = std::sqrt(nrm);
                    for (std::int64_t j = 0; j < len; ++j)
                        da[static_cast<std::size_t>(r * len + j)] = (gr[j] - gy * y[j]) / nrm;
                }
                add_into(n.a, da);
                break;
            }
            case Op::SortLast: {
                const std::int64_t len = av.shape.back();
                const std::int64_t rows = av.size() / len;
                std::vector<double> da(static_cast<std::size_t>(av.size()), 0.0);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < len; ++j)
                        da[static_cast<std::size_t>(r * len + n.idx[static_cast<std::size_t>(r * len + j)])] +=
                            g[static_cast<std::size_t>(r * len + j)];
                add_into(n.a, da);
                break;
            }
            case Op::SliceLast: {
                const std::int64_t width = av.shape.back();
                const std::int64_t rows = av.size() / width;
                std::vector<double> da(static_cast<std::size_t>(av.size()), 0.0);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < n.i1; ++j)
                        da[static_cast<std::size_t>(r * width + n.i0 + j)] =
                            g[static_cast<std::size_t>(r * n.i1 + j)];
                add_into(n.a, da);
                break;
            }
            case Op::GatherLast: {
                const std::int64_t len = av.shape.back();
                const std::int64_t rows = av.size() / len;
                std::vector<double> da(static_cast<std::size_t>(av.size()), 0.0);
                for (std::int64_t r = 0; r < rows; ++r)
                    da[static_cast<std::size_t>(r * len + n.idx[static_cast<std::size_t>(r)])] +=
                        g[static_cast<std::size_t>(r)];
                add_into(n.a, da);
                break;
            }
            case Op::Leaf:
            case Op::Constant:
                break;
        }
    }

    // Accumulate `sign * g` into input `id`, summing when the input is a
    // broadcast scalar.
    void accumulate_broadcast(std::int32_t id, const Tensor& in, const std::vector<double>& g,
                              double sign) {
        if (id < 0 || !nodes_[static_cast<std::size_t>(id)].requires_grad) return;
        if (in.rank() == 0 && g.size() > 1) {
            double acc = 0.0;
            for (double x : g) acc += x;
            add_into(id, {sign * acc});
        } else {
            std::vector<double> da(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) da[i] = sign * g[i];
            add_into(id, da);
        }
    }
};

}  // namespace protorel
