// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xlmeta/tensor.hpp"

namespace xlmeta::ad {

enum class Op : std::uint8_t {
    leaf,
    constant,
    add,
    sub,
    mul,
    div,
    scale,
    matmul,
    transpose,
    tanh,
    exp,
    log,
    sum,
    row_sum,
    col_sum,
    tile_cols,
    tile_rows,
    broadcast_scalar,
    row_softmax,
    reshape,
    embed_rows,
    scatter_rows,
    take_per_row,
    scatter_per_row,
};

const char* op_name(Op op);

class Node;
using NodePtr = std::shared_ptr<const Node>;

// One vertex of the computation graph. Values are frozen at construction;
// adapted parameters are new nodes, never in-place writes, which is what
// makes differentiating through an update step sound.
class Node {
public:
    Node(Tensor value, Op op, bool requires_grad, std::vector<NodePtr> parents,
         double scale_factor = 0.0,
         std::shared_ptr<const std::vector<std::int64_t>> indices = nullptr)
        : value(std::move(value)),
          op(op),
          requires_grad(requires_grad),
          parents(std::move(parents)),
          scale_factor(scale_factor),
          indices(std::move(indices)) {}

    const Tensor value;
    const Op op;
    const bool requires_grad;
    const std::vector<NodePtr> parents;
    const double scale_factor;  // Op::scale only
    const std::shared_ptr<const std::vector<std::int64_t>> indices;  // gather/scatter ops
};

// ---- graph construction -------------------------------------------------

NodePtr leaf(Tensor value, bool requires_grad = true);
NodePtr constant(Tensor value);
NodePtr constant(double v);

// Same value, cut out of the graph (gradient stops here).
NodePtr detach(const NodePtr& x);

NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr div(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, double c);
NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr transpose(const NodePtr& a);
NodePtr tanh(const NodePtr& a);
NodePtr exp(const NodePtr& a);
NodePtr log(const NodePtr& a);

NodePtr sum(const NodePtr& a);                          // any shape -> scalar
NodePtr row_sum(const NodePtr& a);                      // (m x n) -> (m)
NodePtr col_sum(const NodePtr& a);                      // (m x n) -> (n)
NodePtr tile_cols(const NodePtr& v, std::size_t n);     // (m) -> (m x n), rows constant
NodePtr tile_rows(const NodePtr& v, std::size_t m);     // (n) -> (m x n), cols constant
NodePtr broadcast_scalar(const NodePtr& s, Shape shape);
NodePtr reshape(const NodePtr& a, Shape shape);

// Softmax over the last axis: each row of a matrix, or a whole vector.
NodePtr row_softmax(const NodePtr& a);

// table (V x H), ids in [0, V) -> (|ids| x H)
NodePtr embed_rows(const NodePtr& table, std::vector<std::int64_t> ids, std::size_t vocab_size);
// rows (m x H) scattered (summing duplicates) into (num_rows x H)
NodePtr scatter_rows(const NodePtr& rows, std::vector<std::int64_t> ids, std::size_t num_rows);
// X (m x n), cols (m) -> (m) with out[i] = X[i, cols[i]]
NodePtr take_per_row(const NodePtr& x, std::vector<std::int64_t> cols);
// v (m) scattered into (m x n) with out[i, cols[i]] = v[i]
NodePtr scatter_per_row(const NodePtr& v, std::vector<std::int64_t> cols, std::size_t n);

// Uniform constructor for the payload-free primitives.
NodePtr primitive(Op op, const std::vector<NodePtr>& inputs);

// ---- composites ----------------------------------------------------------

NodePtr neg(const NodePtr& a);
NodePtr mean(const NodePtr& a);
// Numerically stable log(row_softmax(x)), built from primitives so it stays
// differentiable to any order.
NodePtr log_row_softmax(const NodePtr& a);

// ---- differentiation -----------------------------------------------------

using ParamSet = std::map<std::string, NodePtr>;
using GradientMap = std::map<std::string, NodePtr>;
using TensorMap = std::map<std::string, Tensor>;

// Reverse-mode gradient of a scalar loss. With create_graph the returned
// gradients are themselves graph nodes differentiable w.r.t. the leaves
// (needed for the meta step); without it they are detached constants.
// Parameters unreachable from the loss get zero gradients.
std::vector<NodePtr> grad(const NodePtr& loss, std::span<const NodePtr> wrt,
                          bool create_graph = false);
GradientMap grad(const NodePtr& loss, const ParamSet& wrt, bool create_graph = false);

TensorMap values(const GradientMap& grads);
TensorMap values(const ParamSet& params);
ParamSet leaves_from(const TensorMap& tensors, bool requires_grad = true);

// Central-difference gradient estimate, (f(x+h) - f(x-h)) / 2h per
// coordinate. Test oracle; independent of the reverse pass above.
TensorMap finite_difference_gradient(const std::function<double(const TensorMap&)>& loss_fn,
                                     const TensorMap& params, double h);

}  // namespace xlmeta::ad
