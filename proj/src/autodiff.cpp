// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over immutable tensor nodes. Backward rules are
// themselves expressed through the graph constructors, so gradients taken
// with create_graph stay differentiable (second order and beyond).

#include "xlmeta/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "xlmeta/kernels.hpp"

namespace xlmeta::ad {

namespace {

[[noreturn]] void shape_error(const char* prim, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(prim) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

[[noreturn]] void rank_error(const char* prim, const Tensor& a, const char* expected) {
    throw std::invalid_argument(std::string(prim) + ": expected " + expected + ", got " +
                                shape_str(a.shape()));
}

bool any_requires_grad(const std::vector<NodePtr>& parents) {
    for (const auto& p : parents) {
        if (p->requires_grad) return true;
    }
    return false;
}

NodePtr make_node(Tensor value, Op op, std::vector<NodePtr> parents, double scale_factor = 0.0,
                  std::shared_ptr<const std::vector<std::int64_t>> indices = nullptr) {
    const bool rg = any_requires_grad(parents);
    return std::make_shared<Node>(std::move(value), op, rg, std::move(parents), scale_factor,
                                  std::move(indices));
}

using IndexVec = std::vector<std::int64_t>;

std::shared_ptr<const IndexVec> freeze_indices(IndexVec ids) {
    return std::make_shared<const IndexVec>(std::move(ids));
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::constant: return "constant";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::div: return "div";
        case Op::scale: return "scale";
        case Op::matmul: return "matmul";
        case Op::transpose: return "transpose";
        case Op::tanh: return "tanh";
        case Op::exp: return "exp";
        case Op::log: return "log";
        case Op::sum: return "sum";
        case Op::row_sum: return "row_sum";
        case Op::col_sum: return "col_sum";
        case Op::tile_cols: return "tile_cols";
        case Op::tile_rows: return "tile_rows";
        case Op::broadcast_scalar: return "broadcast_scalar";
        case Op::row_softmax: return "row_softmax";
        case Op::reshape: return "reshape";
        case Op::embed_rows: return "embed_rows";
        case Op::scatter_rows: return "scatter_rows";
        case Op::take_per_row: return "take_per_row";
        case Op::scatter_per_row: return "scatter_per_row";
    }
    return "?";
}

NodePtr leaf(Tensor value, bool requires_grad) {
    return std::make_shared<Node>(std::move(value), Op::leaf, requires_grad,
                                  std::vector<NodePtr>{});
}

NodePtr constant(Tensor value) {
    return std::make_shared<Node>(std::move(value), Op::constant, false, std::vector<NodePtr>{});
}

NodePtr constant(double v) { return constant(Tensor::scalar(v)); }

NodePtr detach(const NodePtr& x) {
    return std::make_shared<Node>(x->value, Op::constant, false, std::vector<NodePtr>{});
}

namespace {

NodePtr elementwise(const char* prim, Op op, const NodePtr& a, const NodePtr& b) {
    if (!a->value.same_shape(b->value)) shape_error(prim, a->value, b->value);
    const std::size_t n = a->value.numel();
    std::vector<double> out(n);
    switch (op) {
        case Op::add: kernels::add(a->value.data(), b->value.data(), out.data(), n); break;
        case Op::sub: kernels::sub(a->value.data(), b->value.data(), out.data(), n); break;
        case Op::mul: kernels::mul(a->value.data(), b->value.data(), out.data(), n); break;
        case Op::div: kernels::div(a->value.data(), b->value.data(), out.data(), n); break;
        default: throw std::logic_error("elementwise: bad op");
    }
    return make_node(Tensor::from_vector(a->value.shape(), std::move(out)), op, {a, b});
}

}  // namespace

NodePtr add(const NodePtr& a, const NodePtr& b) { return elementwise("add", Op::add, a, b); }
NodePtr sub(const NodePtr& a, const NodePtr& b) { return elementwise("sub", Op::sub, a, b); }
NodePtr mul(const NodePtr& a, const NodePtr& b) { return elementwise("mul", Op::mul, a, b); }
NodePtr div(const NodePtr& a, const NodePtr& b) { return elementwise("div", Op::div, a, b); }

NodePtr scale(const NodePtr& a, double c) {
    const std::size_t n = a->value.numel();
    std::vector<double> out(n);
    kernels::scale(a->value.data(), c, out.data(), n);
    return make_node(Tensor::from_vector(a->value.shape(), std::move(out)), Op::scale, {a}, c);
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2) {
        if (a->value.rank() != 2) rank_error("matmul", a->value, "a matrix");
        rank_error("matmul", b->value, "a matrix");
    }
    if (a->value.cols() != b->value.rows()) shape_error("matmul", a->value, b->value);
    const std::size_t m = a->value.rows(), k = a->value.cols(), n = b->value.cols();
    std::vector<double> out(m * n);
    kernels::matmul(a->value.data(), b->value.data(), out.data(), m, k, n);
    return make_node(Tensor::from_vector({m, n}, std::move(out)), Op::matmul, {a, b});
}

NodePtr transpose(const NodePtr& a) {
    if (a->value.rank() != 2) rank_error("transpose", a->value, "a matrix");
    const std::size_t m = a->value.rows(), n = a->value.cols();
    std::vector<double> out(m * n);
    const double* src = a->value.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
    }
    return make_node(Tensor::from_vector({n, m}, std::move(out)), Op::transpose, {a});
}

namespace {

NodePtr unary_libm(Op op, const NodePtr& a) {
    std::vector<double> out(a->value.view().begin(), a->value.view().end());
    switch (op) {
        case Op::tanh: kernels::tanh_inplace(out.data(), out.size()); break;
        case Op::exp: kernels::exp_inplace(out.data(), out.size()); break;
        case Op::log: kernels::log_inplace(out.data(), out.size()); break;
        default: throw std::logic_error("unary_libm: bad op");
    }
    return make_node(Tensor::from_vector(a->value.shape(), std::move(out)), op, {a});
}

}  // namespace

NodePtr tanh(const NodePtr& a) { return unary_libm(Op::tanh, a); }
NodePtr exp(const NodePtr& a) { return unary_libm(Op::exp, a); }
NodePtr log(const NodePtr& a) { return unary_libm(Op::log, a); }

NodePtr sum(const NodePtr& a) {
    double total = kernels::sum(a->value.data(), a->value.numel());
    return make_node(Tensor::scalar(total), Op::sum, {a});
}

NodePtr row_sum(const NodePtr& a) {
    if (a->value.rank() != 2) rank_error("row_sum", a->value, "a matrix");
    const std::size_t m = a->value.rows(), n = a->value.cols();
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) out[i] = kernels::sum(a->value.data() + i * n, n);
    return make_node(Tensor::from_vector({m}, std::move(out)), Op::row_sum, {a});
}

NodePtr col_sum(const NodePtr& a) {
    if (a->value.rank() != 2) rank_error("col_sum", a->value, "a matrix");
    const std::size_t m = a->value.rows(), n = a->value.cols();
    std::vector<double> out(n, 0.0);
    const double* src = a->value.data();
    for (std::size_t i = 0; i < m; ++i) {
        kernels::add(out.data(), src + i * n, out.data(), n);
    }
    return make_node(Tensor::from_vector({n}, std::move(out)), Op::col_sum, {a});
}

NodePtr tile_cols(const NodePtr& v, std::size_t n) {
    if (v->value.rank() != 1) rank_error("tile_cols", v->value, "a vector");
    const std::size_t m = v->value.numel();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double vi = v->value.at(i);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = vi;
    }
    return make_node(Tensor::from_vector({m, n}, std::move(out)), Op::tile_cols, {v});
}

NodePtr tile_rows(const NodePtr& v, std::size_t m) {
    if (v->value.rank() != 1) rank_error("tile_rows", v->value, "a vector");
    const std::size_t n = v->value.numel();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        std::copy(v->value.data(), v->value.data() + n, out.begin() + i * n);
    }
    return make_node(Tensor::from_vector({m, n}, std::move(out)), Op::tile_rows, {v});
}

NodePtr broadcast_scalar(const NodePtr& s, Shape shape) {
    if (s->value.numel() != 1) rank_error("broadcast_scalar", s->value, "a scalar");
    return make_node(Tensor::full(std::move(shape), s->value.at(0)), Op::broadcast_scalar, {s});
}

NodePtr reshape(const NodePtr& a, Shape shape) {
    return make_node(a->value.reshaped(std::move(shape)), Op::reshape, {a});
}

NodePtr row_softmax(const NodePtr& a) {
    const std::size_t rank = a->value.rank();
    if (rank != 1 && rank != 2) rank_error("row_softmax", a->value, "a vector or matrix");
    const std::size_t m = rank == 2 ? a->value.rows() : 1;
    const std::size_t n = rank == 2 ? a->value.cols() : a->value.numel();
    if (n == 0) rank_error("row_softmax", a->value, "a nonempty row");
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        kernels::softmax_row(a->value.data() + i * n, out.data() + i * n, n);
    }
    return make_node(Tensor::from_vector(a->value.shape(), std::move(out)), Op::row_softmax, {a});
}

NodePtr embed_rows(const NodePtr& table, std::vector<std::int64_t> ids, std::size_t vocab_size) {
    if (table->value.rank() != 2) rank_error("embed_rows", table->value, "a matrix");
    if (table->value.rows() != vocab_size) {
        throw std::invalid_argument("embed_rows: table has " + std::to_string(table->value.rows()) +
                                    " rows, vocab size is " + std::to_string(vocab_size));
    }
    const std::size_t h = table->value.cols();
    std::vector<double> out(ids.size() * h);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab_size) {
            throw std::out_of_range("embed_rows: token id " + std::to_string(ids[i]) +
                                    " out of range for vocab size " + std::to_string(vocab_size));
        }
        std::copy(table->value.data() + static_cast<std::size_t>(ids[i]) * h,
                  table->value.data() + (static_cast<std::size_t>(ids[i]) + 1) * h,
                  out.begin() + i * h);
    }
    const std::size_t count = ids.size();
    return make_node(Tensor::from_vector({count, h}, std::move(out)), Op::embed_rows, {table}, 0.0,
                     freeze_indices(std::move(ids)));
}

NodePtr scatter_rows(const NodePtr& rows, std::vector<std::int64_t> ids, std::size_t num_rows) {
    if (rows->value.rank() != 2) rank_error("scatter_rows", rows->value, "a matrix");
    if (rows->value.rows() != ids.size()) {
        throw std::invalid_argument("scatter_rows: " + std::to_string(ids.size()) +
                                    " ids for matrix " + shape_str(rows->value.shape()));
    }
    const std::size_t h = rows->value.cols();
    std::vector<double> out(num_rows * h, 0.0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= num_rows) {
            throw std::out_of_range("scatter_rows: row id " + std::to_string(ids[i]) +
                                    " out of range for " + std::to_string(num_rows) + " rows");
        }
        double* dst = out.data() + static_cast<std::size_t>(ids[i]) * h;
        kernels::add(dst, rows->value.data() + i * h, dst, h);
    }
    return make_node(Tensor::from_vector({num_rows, h}, std::move(out)), Op::scatter_rows, {rows},
                     0.0, freeze_indices(std::move(ids)));
}

NodePtr take_per_row(const NodePtr& x, std::vector<std::int64_t> cols) {
    if (x->value.rank() != 2) rank_error("take_per_row", x->value, "a matrix");
    if (x->value.rows() != cols.size()) {
        throw std::invalid_argument("take_per_row: " + std::to_string(cols.size()) +
                                    " indices for matrix " + shape_str(x->value.shape()));
    }
    const std::size_t n = x->value.cols();
    std::vector<double> out(cols.size());
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= n) {
            throw std::out_of_range("take_per_row: index " + std::to_string(cols[i]) +
                                    " out of range for " + std::to_string(n) + " columns");
        }
        out[i] = x->value.at(i, static_cast<std::size_t>(cols[i]));
    }
    const std::size_t count = cols.size();
    return make_node(Tensor::from_vector({count}, std::move(out)), Op::take_per_row, {x}, 0.0,
                     freeze_indices(std::move(cols)));
}

NodePtr scatter_per_row(const NodePtr& v, std::vector<std::int64_t> cols, std::size_t n) {
    if (v->value.rank() != 1) rank_error("scatter_per_row", v->value, "a vector");
    if (v->value.numel() != cols.size()) {
        throw std::invalid_argument("scatter_per_row: " + std::to_string(cols.size()) +
                                    " indices for vector " + shape_str(v->value.shape()));
    }
    const std::size_t m = v->value.numel();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= n) {
            throw std::out_of_range("scatter_per_row: index " + std::to_string(cols[i]) +
                                    " out of range for " + std::to_string(n) + " columns");
        }
        out[i * n + static_cast<std::size_t>(cols[i])] = v->value.at(i);
    }
    return make_node(Tensor::from_vector({m, n}, std::move(out)), Op::scatter_per_row, {v}, 0.0,
                     freeze_indices(std::move(cols)));
}

NodePtr primitive(Op op, const std::vector<NodePtr>& inputs) {
    auto want = [&](std::size_t n) {
        if (inputs.size() != n) {
            throw std::invalid_argument(std::string("primitive: ") + op_name(op) + " takes " +
                                        std::to_string(n) + " inputs, got " +
                                        std::to_string(inputs.size()));
        }
    };
    switch (op) {
        case Op::add: want(2); return add(inputs[0], inputs[1]);
        case Op::sub: want(2); return sub(inputs[0], inputs[1]);
        case Op::mul: want(2); return mul(inputs[0], inputs[1]);
        case Op::div: want(2); return div(inputs[0], inputs[1]);
        case Op::matmul: want(2); return matmul(inputs[0], inputs[1]);
        case Op::transpose: want(1); return transpose(inputs[0]);
        case Op::tanh: want(1); return tanh(inputs[0]);
        case Op::exp: want(1); return exp(inputs[0]);
        case Op::log: want(1); return log(inputs[0]);
        case Op::sum: want(1); return sum(inputs[0]);
        case Op::row_sum: want(1); return row_sum(inputs[0]);
        case Op::col_sum: want(1); return col_sum(inputs[0]);
        case Op::row_softmax: want(1); return row_softmax(inputs[0]);
        default:
            throw std::invalid_argument(std::string("primitive: ") + op_name(op) +
                                        " needs a dedicated constructor");
    }
}

NodePtr neg(const NodePtr& a) { return scale(a, -1.0); }

NodePtr mean(const NodePtr& a) {
    return scale(sum(a), 1.0 / static_cast<double>(a->value.numel()));
}

NodePtr log_row_softmax(const NodePtr& a) {
    const std::size_t rank = a->value.rank();
    if (rank != 1 && rank != 2) rank_error("log_row_softmax", a->value, "a vector or matrix");
    if (rank == 1) {
        double mx = *std::max_element(a->value.view().begin(), a->value.view().end());
        NodePtr m = constant(mx);
        NodePtr shifted = sub(a, broadcast_scalar(m, a->value.shape()));
        NodePtr lse = add(log(sum(exp(shifted))), m);
        return sub(a, broadcast_scalar(lse, a->value.shape()));
    }
    const std::size_t rows = a->value.rows(), n = a->value.cols();
    std::vector<double> maxes(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        maxes[i] = *std::max_element(a->value.data() + i * n, a->value.data() + (i + 1) * n);
    }
    NodePtr m = constant(Tensor::from_vector({rows}, std::move(maxes)));
    NodePtr shifted = sub(a, tile_cols(m, n));
    NodePtr lse = add(log(row_sum(exp(shifted))), m);
    return sub(a, tile_cols(lse, n));
}

// ---- reverse pass ----------------------------------------------------------

namespace {

std::vector<NodePtr> topo_order(const NodePtr& loss) {
    std::vector<NodePtr> order;
    std::unordered_set<const Node*> seen;
    // Iterative post-order DFS; parents land before children in `order`.
    struct Frame {
        NodePtr node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    if (loss->requires_grad) {
        stack.push_back({loss, 0});
        seen.insert(loss.get());
    }
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next_parent < top.node->parents.size()) {
            const NodePtr& p = top.node->parents[top.next_parent++];
            if (p->requires_grad && !seen.count(p.get())) {
                seen.insert(p.get());
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }
    return order;
}

NodePtr ones_like(const Tensor& t) { return constant(Tensor::full(t.shape(), 1.0)); }

// Adjoint contributions for each differentiable parent of `node`, given the
// node's own adjoint g. Built from graph primitives so the result remains
// differentiable.
void backprop_into_parents(const NodePtr& node, const NodePtr& g,
                           std::unordered_map<const Node*, NodePtr>& adjoint) {
    auto accumulate = [&](const NodePtr& parent, const NodePtr& contribution) {
        if (!parent->requires_grad) return;
        auto it = adjoint.find(parent.get());
        if (it == adjoint.end()) {
            adjoint.emplace(parent.get(), contribution);
        } else {
            it->second = add(it->second, contribution);
        }
    };
    const auto& p = node->parents;
    switch (node->op) {
        case Op::leaf:
        case Op::constant:
            break;
        case Op::add:
            accumulate(p[0], g);
            accumulate(p[1], g);
            break;
        case Op::sub:
            accumulate(p[0], g);
            accumulate(p[1], neg(g));
            break;
        case Op::mul:
            accumulate(p[0], mul(g, p[1]));
            accumulate(p[1], mul(g, p[0]));
            break;
        case Op::div:
            accumulate(p[0], div(g, p[1]));
            accumulate(p[1], neg(div(mul(g, node), p[1])));
            break;
        case Op::scale:
            accumulate(p[0], scale(g, node->scale_factor));
            break;
        case Op::matmul:
            accumulate(p[0], matmul(g, transpose(p[1])));
            accumulate(p[1], matmul(transpose(p[0]), g));
            break;
        case Op::transpose:
            accumulate(p[0], transpose(g));
            break;
        case Op::tanh:
            accumulate(p[0], mul(g, sub(ones_like(node->value), mul(node, node))));
            break;
        case Op::exp:
            accumulate(p[0], mul(g, node));
            break;
        case Op::log:
            accumulate(p[0], div(g, p[0]));
            break;
        case Op::sum:
            accumulate(p[0], broadcast_scalar(g, p[0]->value.shape()));
            break;
        case Op::row_sum:
            accumulate(p[0], tile_cols(g, p[0]->value.cols()));
            break;
        case Op::col_sum:
            accumulate(p[0], tile_rows(g, p[0]->value.rows()));
            break;
        case Op::tile_cols:
            accumulate(p[0], row_sum(g));
            break;
        case Op::tile_rows:
            accumulate(p[0], col_sum(g));
            break;
        case Op::broadcast_scalar:
            accumulate(p[0], sum(g));
            break;
        case Op::row_softmax: {
            // dx = y * (g - rowsum(g * y))
            const NodePtr gy = mul(g, node);
            if (node->value.rank() == 2) {
                const NodePtr correction = tile_cols(row_sum(gy), node->value.cols());
                accumulate(p[0], mul(node, sub(g, correction)));
            } else {
                const NodePtr correction = broadcast_scalar(sum(gy), node->value.shape());
                accumulate(p[0], mul(node, sub(g, correction)));
            }
            break;
        }
        case Op::reshape:
            accumulate(p[0], reshape(g, p[0]->value.shape()));
            break;
        case Op::embed_rows:
            accumulate(p[0], scatter_rows(g, *node->indices, p[0]->value.rows()));
            break;
        case Op::scatter_rows:
            accumulate(p[0], embed_rows(g, *node->indices, node->value.rows()));
            break;
        case Op::take_per_row:
            accumulate(p[0], scatter_per_row(g, *node->indices, p[0]->value.cols()));
            break;
        case Op::scatter_per_row:
            accumulate(p[0], take_per_row(g, *node->indices));
            break;
    }
}

}  // namespace

std::vector<NodePtr> grad(const NodePtr& loss, std::span<const NodePtr> wrt, bool create_graph) {
    if (loss->value.numel() != 1) {
        throw std::invalid_argument("grad: loss must be a scalar, got " +
                                    shape_str(loss->value.shape()));
    }
    std::unordered_map<const Node*, NodePtr> adjoint;
    if (loss->requires_grad) {
        adjoint.emplace(loss.get(), ones_like(loss->value));
        const std::vector<NodePtr> order = topo_order(loss);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            auto found = adjoint.find(it->get());
            if (found == adjoint.end()) continue;
            backprop_into_parents(*it, found->second, adjoint);
        }
    }
    std::vector<NodePtr> out;
    out.reserve(wrt.size());
    for (const NodePtr& w : wrt) {
        auto it = adjoint.find(w.get());
        NodePtr g = it != adjoint.end() ? it->second : constant(Tensor::zeros(w->value.shape()));
        out.push_back(create_graph ? g : detach(g));
    }
    return out;
}

GradientMap grad(const NodePtr& loss, const ParamSet& wrt, bool create_graph) {
    std::vector<NodePtr> nodes;
    nodes.reserve(wrt.size());
    for (const auto& [name, node] : wrt) nodes.push_back(node);
    std::vector<NodePtr> grads = grad(loss, nodes, create_graph);
    GradientMap out;
    std::size_t i = 0;
    for (const auto& [name, node] : wrt) out.emplace(name, grads[i++]);
    return out;
}

TensorMap values(const GradientMap& grads) {
    TensorMap out;
    for (const auto& [name, node] : grads) out.emplace(name, node->value);
    return out;
}

ParamSet leaves_from(const TensorMap& tensors, bool requires_grad) {
    ParamSet out;
    for (const auto& [name, t] : tensors) out.emplace(name, leaf(t, requires_grad));
    return out;
}

TensorMap finite_difference_gradient(const std::function<double(const TensorMap&)>& loss_fn,
                                     const TensorMap& params, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_difference_gradient: h must be > 0");
    TensorMap grads;
    for (const auto& [name, tensor] : params) {
        std::vector<double> g(tensor.numel());
        for (std::size_t i = 0; i < tensor.numel(); ++i) {
            TensorMap bumped = params;
            std::vector<double> plus(tensor.view().begin(), tensor.view().end());
            plus[i] += h;
            bumped[name] = Tensor::from_vector(tensor.shape(), std::move(plus));
            const double f_plus = loss_fn(bumped);
            std::vector<double> minus(tensor.view().begin(), tensor.view().end());
            minus[i] -= h;
            bumped[name] = Tensor::from_vector(tensor.shape(), std::move(minus));
            const double f_minus = loss_fn(bumped);
            g[i] = (f_plus - f_minus) / (2.0 * h);
        }
        grads.emplace(name, Tensor::from_vector(tensor.shape(), std::move(g)));
    }
    return grads;
}

}  // namespace xlmeta::ad
