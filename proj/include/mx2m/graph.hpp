// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mx2m/gemm.hpp"
#include "mx2m/tensor.hpp"

namespace mx2m {

// Reverse-mode autodiff over a fixed op vocabulary. Nodes are appended in
// topological order (an op can only reference already-built nodes), forward
// evaluates the tape front to back and caches every value, backward walks it
// in reverse accumulating gradients with the multivariate chain rule.
// Gradients of a leaf used several times sum; Detach blocks flow entirely.

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  AddScalar,
  MulScalar,
  MatMul,
  Relu,
  Softmax,
  Log,
  Sum,
  Mean,
  GatherRows,
  ConcatCols,
  AddRowVec,
  Reshape,
  Detach,
  DxmfApply,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "Leaf";
    case OpKind::Add: return "Add";
    case OpKind::Sub: return "Sub";
    case OpKind::Mul: return "Mul";
    case OpKind::AddScalar: return "AddScalar";
    case OpKind::MulScalar: return "MulScalar";
    case OpKind::MatMul: return "MatMul";
    case OpKind::Relu: return "Relu";
    case OpKind::Softmax: return "Softmax";
    case OpKind::Log: return "Log";
    case OpKind::Sum: return "Sum";
    case OpKind::Mean: return "Mean";
    case OpKind::GatherRows: return "GatherRows";
    case OpKind::ConcatCols: return "ConcatCols";
    case OpKind::AddRowVec: return "AddRowVec";
    case OpKind::Reshape: return "Reshape";
    case OpKind::Detach: return "Detach";
    case OpKind::DxmfApply: return "DxmfApply";
  }
  return "?";
}

class Graph;

struct NodeRef {
  Graph* graph = nullptr;
  int id = -1;
  bool valid() const { return graph != nullptr && id >= 0; }
};

class Graph {
 public:
  // --- construction ------------------------------------------------------

  NodeRef leaf(const std::string& name, Shape shape, bool requires_grad) {
    Node n;
    n.kind = OpKind::Leaf;
    n.shape = std::move(shape);
    n.name = name;
    n.requires_grad = requires_grad;
    n.needs_grad = requires_grad;
    leaf_ids_[name] = static_cast<int>(nodes_.size());
    return push(std::move(n));
  }

  // Leaf carrying a fixed value; never differentiated.
  NodeRef constant(Tensor value) {
    Node n;
    n.kind = OpKind::Leaf;
    n.shape = value.shape;
    n.value = std::move(value);
    n.bound = true;
    return push(std::move(n));
  }

  NodeRef add(NodeRef a, NodeRef b) { return binary_same_shape(OpKind::Add, a, b); }
  NodeRef sub(NodeRef a, NodeRef b) { return binary_same_shape(OpKind::Sub, a, b); }
  NodeRef mul(NodeRef a, NodeRef b) { return binary_same_shape(OpKind::Mul, a, b); }

  NodeRef add_scalar(NodeRef a, double s) {
    Node n = unary(OpKind::AddScalar, a);
    n.scalar = s;
    return push(std::move(n));
  }
  NodeRef mul_scalar(NodeRef a, double s) {
    Node n = unary(OpKind::MulScalar, a);
    n.scalar = s;
    return push(std::move(n));
  }

  NodeRef matmul(NodeRef a, NodeRef b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.shape.size() == 2 && nb.shape.size() == 2, OpKind::MatMul,
            "operands must be 2-D, got " + shape_str(na.shape) + " and " + shape_str(nb.shape));
    require(na.shape[1] == nb.shape[0], OpKind::MatMul,
            "inner dimensions differ: " + shape_str(na.shape) + " x " + shape_str(nb.shape));
    Node n;
    n.kind = OpKind::MatMul;
    n.parents = {a.id, b.id};
    n.shape = {na.shape[0], nb.shape[1]};
    n.needs_grad = na.needs_grad || nb.needs_grad;
    return push(std::move(n));
  }

  NodeRef relu(NodeRef a) { return push(unary(OpKind::Relu, a)); }
  NodeRef log(NodeRef a) { return push(unary(OpKind::Log, a)); }

  // Softmax along the last axis.
  NodeRef softmax(NodeRef a) { return push(unary(OpKind::Softmax, a)); }

  NodeRef sum(NodeRef a) {
    Node n = unary(OpKind::Sum, a);
    n.shape = {1};
    return push(std::move(n));
  }
  NodeRef mean(NodeRef a) {
    Node n = unary(OpKind::Mean, a);
    n.shape = {1};
    return push(std::move(n));
  }

  // Rows of a 2-D input selected by index; index -1 yields a zero row
  // (used for implicit zero padding). Backward scatter-adds into the source.
  NodeRef gather_rows(NodeRef a, std::vector<int> indices) {
    const Node& na = node(a);
    require(na.shape.size() == 2, OpKind::GatherRows, "input must be 2-D, got " + shape_str(na.shape));
    require(!indices.empty(), OpKind::GatherRows, "index list is empty");
    for (int idx : indices)
      require(idx >= -1 && idx < na.shape[0], OpKind::GatherRows,
              "index " + std::to_string(idx) + " out of range for " + shape_str(na.shape));
    Node n;
    n.kind = OpKind::GatherRows;
    n.parents = {a.id};
    n.shape = {static_cast<int>(indices.size()), na.shape[1]};
    n.indices = std::move(indices);
    n.needs_grad = na.needs_grad;
    return push(std::move(n));
  }

  NodeRef concat_cols(NodeRef a, NodeRef b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.shape.size() == 2 && nb.shape.size() == 2 && na.shape[0] == nb.shape[0],
            OpKind::ConcatCols,
            "row counts must match: " + shape_str(na.shape) + " vs " + shape_str(nb.shape));
    Node n;
    n.kind = OpKind::ConcatCols;
    n.parents = {a.id, b.id};
    n.shape = {na.shape[0], na.shape[1] + nb.shape[1]};
    n.needs_grad = na.needs_grad || nb.needs_grad;
    return push(std::move(n));
  }

  // (m x n) + row vector of n, added to every row.
  NodeRef add_rowvec(NodeRef a, NodeRef r) {
    const Node& na = node(a);
    const Node& nr = node(r);
    require(na.shape.size() == 2, OpKind::AddRowVec, "left operand must be 2-D");
    require(shape_numel(nr.shape) == na.shape[1], OpKind::AddRowVec,
            "row vector length " + shape_str(nr.shape) + " does not match " + shape_str(na.shape));
    Node n;
    n.kind = OpKind::AddRowVec;
    n.parents = {a.id, r.id};
    n.shape = na.shape;
    n.needs_grad = na.needs_grad || nr.needs_grad;
    return push(std::move(n));
  }

  NodeRef reshape(NodeRef a, Shape shape) {
    const Node& na = node(a);
    require(shape_numel(shape) == shape_numel(na.shape), OpKind::Reshape,
            "cannot reshape " + shape_str(na.shape) + " to " + shape_str(shape));
    Node n;
    n.kind = OpKind::Reshape;
    n.parents = {a.id};
    n.shape = std::move(shape);
    n.needs_grad = na.needs_grad;
    return push(std::move(n));
  }

  NodeRef detach(NodeRef a) {
    Node n = unary(OpKind::Detach, a);
    n.needs_grad = false;
    return push(std::move(n));
  }

  // Per-row dynamic kernel contraction: kernels row i holds an F x C matrix
  // flattened f-major, feats row i an F vector; out[i,c] = sum_f K[i,f*C+c] * H[i,f].
  NodeRef dxmf_apply(NodeRef kernels, NodeRef feats, int classes) {
    const Node& nk = node(kernels);
    const Node& nf = node(feats);
    require(classes >= 1, OpKind::DxmfApply, "class count must be >= 1");
    require(nk.shape.size() == 2 && nf.shape.size() == 2, OpKind::DxmfApply, "operands must be 2-D");
    require(nk.shape[0] == nf.shape[0], OpKind::DxmfApply,
            "row counts differ: " + shape_str(nk.shape) + " vs " + shape_str(nf.shape));
    require(nk.shape[1] == nf.shape[1] * classes, OpKind::DxmfApply,
            "kernel width " + std::to_string(nk.shape[1]) + " != feature width " +
                std::to_string(nf.shape[1]) + " x " + std::to_string(classes) + " classes");
    Node n;
    n.kind = OpKind::DxmfApply;
    n.parents = {kernels.id, feats.id};
    n.shape = {nk.shape[0], classes};
    n.classes = classes;
    n.needs_grad = nk.needs_grad || nf.needs_grad;
    return push(std::move(n));
  }

  // --- execution ----------------------------------------------------------

  void bind(const std::string& name, Tensor value) {
    auto it = leaf_ids_.find(name);
    if (it == leaf_ids_.end()) throw UsageError("bind: no leaf named '" + name + "'");
    Node& n = nodes_[static_cast<size_t>(it->second)];
    if (value.shape != n.shape)
      throw ShapeError("bind: leaf '" + name + "' declared " + shape_str(n.shape) +
                       " but bound " + shape_str(value.shape));
    n.value = std::move(value);
    n.bound = true;
    forward_done_ = false;
  }

  const Tensor& forward(NodeRef out) {
    check_ref(out);
    for (int id = 0; id <= out.id; ++id) eval(id);
    forward_upto_ = out.id;
    forward_done_ = true;
    return nodes_[static_cast<size_t>(out.id)].value;
  }

  Tensor forward(const std::map<std::string, Tensor>& leaf_bindings, NodeRef out) {
    for (const auto& [name, value] : leaf_bindings) bind(name, value);
    return forward(out);
  }

  const Tensor& value(NodeRef r) const {
    check_ref(r);
    const Node& n = nodes_[static_cast<size_t>(r.id)];
    if (!forward_done_ || r.id > forward_upto_)
      throw UsageError("value: node " + node_label(r.id) + " has not been evaluated");
    return n.value;
  }

  // Gradients of a scalar output w.r.t. every requires_grad leaf.
  std::map<std::string, Tensor> backward(NodeRef out) {
    check_ref(out);
    if (!forward_done_ || out.id > forward_upto_)
      throw UsageError("backward called before forward");
    const Node& on = nodes_[static_cast<size_t>(out.id)];
    if (shape_numel(on.shape) != 1)
      throw UsageError("backward requires a scalar output, got " + shape_str(on.shape));

    grads_.assign(nodes_.size(), Tensor{});
    grad_set_.assign(nodes_.size(), 0);
    ensure_grad(out.id);
    grads_[static_cast<size_t>(out.id)].data[0] = 1.0;

    for (int id = out.id; id >= 0; --id) {
      if (!grad_set_[static_cast<size_t>(id)]) continue;
      if (!nodes_[static_cast<size_t>(id)].needs_grad) continue;
      propagate(id);
    }

    std::map<std::string, Tensor> out_grads;
    for (const auto& [name, id] : leaf_ids_) {
      const Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.requires_grad) continue;
      if (grad_set_[static_cast<size_t>(id)])
        out_grads[name] = grads_[static_cast<size_t>(id)];
      else
        out_grads[name] = Tensor::zeros(n.shape);
    }
    backward_done_ = true;
    return out_grads;
  }

  const Tensor& grad(NodeRef r) const {
    check_ref(r);
    if (!backward_done_) throw UsageError("grad: backward has not run");
    const size_t i = static_cast<size_t>(r.id);
    if (!grad_set_[i]) {
      if (grads_cache_zero_.shape != nodes_[i].shape)
        grads_cache_zero_ = Tensor::zeros(nodes_[i].shape);
      return grads_cache_zero_;
    }
    return grads_[i];
  }

  const Shape& shape_of(NodeRef r) const {
    check_ref(r);
    return nodes_[static_cast<size_t>(r.id)].shape;
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<int> parents;
    Shape shape;
    Tensor value;
    std::string name;
    bool requires_grad = false;  // leaves only
    bool needs_grad = false;     // any requires_grad leaf upstream
    bool bound = false;          // leaves only
    double scalar = 0.0;
    std::vector<int> indices;
    int classes = 0;
  };

  NodeRef push(Node n) {
    nodes_.push_back(std::move(n));
    forward_done_ = false;
    backward_done_ = false;
    return NodeRef{this, static_cast<int>(nodes_.size()) - 1};
  }

  Node unary(OpKind kind, NodeRef a) {
    const Node& na = node(a);
    Node n;
    n.kind = kind;
    n.parents = {a.id};
    n.shape = na.shape;
    n.needs_grad = na.needs_grad;
    return n;
  }

  NodeRef binary_same_shape(OpKind kind, NodeRef a, NodeRef b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.shape == nb.shape, kind,
            "shapes differ: " + shape_str(na.shape) + " vs " + shape_str(nb.shape));
    Node n;
    n.kind = kind;
    n.parents = {a.id, b.id};
    n.shape = na.shape;
    n.needs_grad = na.needs_grad || nb.needs_grad;
    return push(std::move(n));
  }

  const Node& node(NodeRef r) const {
    check_ref(r);
    return nodes_[static_cast<size_t>(r.id)];
  }

  void check_ref(NodeRef r) const {
    if (r.graph != this || r.id < 0 || r.id >= static_cast<int>(nodes_.size()))
      throw UsageError("node reference does not belong to this graph");
  }

  void require(bool ok, OpKind kind, const std::string& msg) const {
    if (!ok)
      throw ShapeError(std::string(op_name(kind)) + " at node #" +
                       std::to_string(nodes_.size()) + ": " + msg);
  }

  std::string node_label(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    std::string s = "#" + std::to_string(id) + ":" + op_name(n.kind);
    if (!n.name.empty()) s += "('" + n.name + "')";
    return s;
  }

  void eval(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    switch (n.kind) {
      case OpKind::Leaf:
        if (!n.bound)
          throw UsageError("forward: leaf " + node_label(id) + " is unbound");
        return;  // bound values are the caller's responsibility; no finite check here
      case OpKind::Add:
      case OpKind::Sub:
      case OpKind::Mul: {
        const Tensor& a = val(n.parents[0]);
        const Tensor& b = val(n.parents[1]);
        n.value = Tensor(n.shape);
        const size_t m = a.data.size();
        if (n.kind == OpKind::Add)
          for (size_t i = 0; i < m; ++i) n.value.data[i] = a.data[i] + b.data[i];
        else if (n.kind == OpKind::Sub)
          for (size_t i = 0; i < m; ++i) n.value.data[i] = a.data[i] - b.data[i];
        else
          for (size_t i = 0; i < m; ++i) n.value.data[i] = a.data[i] * b.data[i];
        break;
      }
      case OpKind::AddScalar: {
        const Tensor& a = val(n.parents[0]);
        n.value = Tensor(n.shape);
        for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = a.data[i] + n.scalar;
        break;
      }
      case OpKind::MulScalar: {
        const Tensor& a = val(n.parents[0]);
        n.value = Tensor(n.shape);
        for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = a.data[i] * n.scalar;
        break;
      }
      case OpKind::MatMul: {
        const Tensor& a = val(n.parents[0]);
        const Tensor& b = val(n.parents[1]);
        n.value = Tensor(n.shape);
        kernels::gemm_nn(a.shape[0], b.shape[1], a.shape[1], a.data.data(), b.data.data(),
                         n.value.data.data());
        break;
      }
      case OpKind::Relu: {
        const Tensor& a = val(n.parents[0]);
        n.value = Tensor(n.shape);
        for (size_t i = 0; i < a.data.size(); ++i)
          n.value.data[i] = a.data[i] > 0.0 ? a.data[i] : 0.0;
        break;
      }
      case OpKind::Softmax: {
        const Tensor& a = val(n.parents[0]);
        n.value = Tensor(n.shape);
        const int last = n.shape.back();
        const int64_t rows = a.numel() / last;
        for (int64_t r = 0; r < rows; ++r) {
          const double* x = a.data.data() + r * last;
          double* y = n.value.data.data() + r * last;
          double mx = x[0];
          for (int j = 1; j < last; ++j) mx = x[j] > mx ? x[j] : mx;
          double s = 0.0;
          for (int j = 0; j < last; ++j) s += (y[j] = std::exp(x[j] - mx));
          const double inv = 1.0 / s;
          for (int j = 0; j < last; ++j) y[j] *= inv;
        }
        break;
      }
      case OpKind::Log: {
        const Tensor& a = val(n.parents[0]);
        n.value = Tensor(n.shape);
        for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = std::log(a.data[i]);
        break;
      }
      case OpKind::Sum:
      case OpKind::Mean: {
        const Tensor& a = val(n.parents[0]);
        double s = 0.0;
        for (double v : a.data) s += v;
        if (n.kind == OpKind::Mean) s /= static_cast<double>(a.numel());
        n.value = Tensor::scalar(s);
        break;
      }
      case OpKind::GatherRows: {
        const Tensor& a = val(n.parents[0]);
        const int cols = a.shape[1];
        n.value = Tensor(n.shape);
        for (size_t r = 0; r < n.indices.size(); ++r) {
          const int src = n.indices[r];
          if (src < 0) continue;  // implicit zero row
          const double* from = a.data.data() + static_cast<size_t>(src) * cols;
          double* to = n.value.data.data() + r * cols;
          for (int j = 0; j < cols; ++j) to[j] = from[j];
        }
        break;
      }
      case OpKind::ConcatCols: {
        const Tensor& a = val(n.parents[0]);
        const Tensor& b = val(n.parents[1]);
        const int ca = a.shape[1], cb = b.shape[1];
        n.value = Tensor(n.shape);
        for (int r = 0; r < n.shape[0]; ++r) {
          double* to = n.value.data.data() + static_cast<size_t>(r) * (ca + cb);
          const double* fa = a.data.data() + static_cast<size_t>(r) * ca;
          const double* fb = b.data.data() + static_cast<size_t>(r) * cb;
          for (int j = 0; j < ca; ++j) to[j] = fa[j];
          for (int j = 0; j < cb; ++j) to[ca + j] = fb[j];
        }
        break;
      }
      case OpKind::AddRowVec: {
        const Tensor& a = val(n.parents[0]);
        const Tensor& r = val(n.parents[1]);
        const int cols = a.shape[1];
        n.value = Tensor(n.shape);
        for (int i = 0; i < a.shape[0]; ++i) {
          const double* from = a.data.data() + static_cast<size_t>(i) * cols;
          double* to = n.value.data.data() + static_cast<size_t>(i) * cols;
          for (int j = 0; j < cols; ++j) to[j] = from[j] + r.data[static_cast<size_t>(j)];
        }
        break;
      }
      case OpKind::Reshape:
      case OpKind::Detach: {
        n.value = val(n.parents[0]);
        n.value.shape = n.shape;
        break;
      }
      case OpKind::DxmfApply: {
        const Tensor& k = val(n.parents[0]);
        const Tensor& h = val(n.parents[1]);
        const int c = n.classes;
        const int f = h.shape[1];
        n.value = Tensor(n.shape);
        for (int i = 0; i < h.shape[0]; ++i) {
          const double* ki = k.data.data() + static_cast<size_t>(i) * f * c;
          const double* hi = h.data.data() + static_cast<size_t>(i) * f;
          double* oi = n.value.data.data() + static_cast<size_t>(i) * c;
          for (int j = 0; j < c; ++j) oi[j] = 0.0;
          for (int p = 0; p < f; ++p) {
            const double hv = hi[p];
            const double* kp = ki + static_cast<size_t>(p) * c;
            for (int j = 0; j < c; ++j) oi[j] += kp[j] * hv;
          }
        }
        break;
      }
    }
    if (!n.value.all_finite())
      throw NumericError("non-finite value produced at " + node_label(id));
  }

  const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }

  void ensure_grad(int id) {
    const size_t i = static_cast<size_t>(id);
    if (!grad_set_[i]) {
      grads_[i] = Tensor::zeros(nodes_[i].shape);
      grad_set_[i] = 1;
    }
  }

  // Adds this node's contribution to its parents' gradients.
  void propagate(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    const Tensor& g = grads_[static_cast<size_t>(id)];
    auto parent_grad = [&](int slot) -> Tensor& {
      const int pid = n.parents[static_cast<size_t>(slot)];
      ensure_grad(pid);
      return grads_[static_cast<size_t>(pid)];
    };
    auto parent_needs = [&](int slot) {
      return nodes_[static_cast<size_t>(n.parents[static_cast<size_t>(slot)])].needs_grad;
    };

    switch (n.kind) {
      case OpKind::Leaf:
      case OpKind::Detach:
        return;
      case OpKind::Add: {
        for (int s = 0; s < 2; ++s) {
          if (!parent_needs(s)) continue;
          Tensor& pg = parent_grad(s);
          for (size_t i = 0; i < g.data.size(); ++i) pg.data[i] += g.data[i];
        }
        return;
      }
      case OpKind::Sub: {
        if (parent_needs(0)) {
          Tensor& pg = parent_grad(0);
          for (size_t i = 0; i < g.data.size(); ++i) pg.data[i] += g.data[i];
        }
        if (parent_needs(1)) {
          Tensor& pg = parent_grad(1);
          for (size_t i = 0; i < g.data.size(); ++i) pg.data[i] -= g.data[i];
        }
        return;
      }
      case OpKind::Mul: {
        const Tensor& a = val(n.parents[0]);
        const Tensor& b = val(n.parents[1]);
        if (parent_needs(0)) {
          Tensor& pg = parent_grad(0);
          for (size_t i = 0; i < g.data.size(); ++i) pg.data[i] += g.data[i] * b.data[i];
        }
        if (parent_needs(1)) {
          Tensor& pg = parent_grad(1);
          for (size_t i = 0; i < g.data.size(); ++i) pg.data[i] += g.data[i] * a.data[i];
        }
        return;
      }
      case OpKind::AddScalar: {
        if (!parent_needs(0)) return;
        Tensor& pg = parent_grad(0);
        for (size_t i = 0; i < g.data.size(); ++i) pg.data[i] += g.data[i];
        return;
      }
      case OpKind::MulScalar: {
        if (!parent_needs(0)) return;
        Tensor& pg = parent_grad(0);
        for (size_t i = 0; i < g.data.size(); ++i) pg.data[i] += g.data[i] * n.scalar;
        return;
      }
      case OpKind::MatMul: {
        const Tensor& a = val(n.parents[0]);
        const Tensor& b = val(n.parents[1]);
        const int m = a.shape[0], k = a.shape[1], c = b.shape[1];
        if (parent_needs(0))  // dA += dC * B^T
          kernels::gemm_nt(m, k, c, g.data.data(), b.data.data(), parent_grad(0).data.data(),
                           true);
        if (parent_needs(1))  // dB += A^T * dC
          kernels::gemm_tn(k, c, m, a.data.data(), g.data.data(), parent_grad(1).data.data(),
                           true);
        return;
      }
      case OpKind::Relu: {
        if (!parent_needs(0)) return;
        const Tensor& a = val(n.parents[0]);
        Tensor& pg = parent_grad(0);
        for (size_t i = 0; i < g.data.size(); ++i)
          if (a.data[i] > 0.0) pg.data[i] += g.data[i];
        return;
      }
      case OpKind::Softmax: {
        if (!parent_needs(0)) return;
        const Tensor& y = n.value;
        Tensor& pg = parent_grad(0);
        const int last = n.shape.back();
        const int64_t rows = y.numel() / last;
        for (int64_t r = 0; r < rows; ++r) {
          const double* yr = y.data.data() + r * last;
          const double* gr = g.data.data() + r * last;
          double* pr = pg.data.data() + r * last;
          double dot = 0.0;
          for (int j = 0; j < last; ++j) dot += gr[j] * yr[j];
          for (int j = 0; j < last; ++j) pr[j] += yr[j] * (gr[j] - dot);
        }
        return;
      }
      case OpKind::Log: {
        if (!parent_needs(0)) return;
        const Tensor& a = val(n.parents[0]);
        Tensor& pg = parent_grad(0);
        for (size_t i = 0; i < g.data.size(); ++i) pg.data[i] += g.data[i] / a.data[i];
        return;
      }
      case OpKind::Sum: {
        if (!parent_needs(0)) return;
        Tensor& pg = parent_grad(0);
        const double gv = g.data[0];
        for (double& v : pg.data) v += gv;
        return;
      }
      case OpKind::Mean: {
        if (!parent_needs(0)) return;
        Tensor& pg = parent_grad(0);
        const double gv = g.data[0] / static_cast<double>(pg.numel());
        for (double& v : pg.data) v += gv;
        return;
      }
      case OpKind::GatherRows: {
        if (!parent_needs(0)) return;
        Tensor& pg = parent_grad(0);
        const int cols = pg.shape[1];
        for (size_t r = 0; r < n.indices.size(); ++r) {
          const int dst = n.indices[r];
          if (dst < 0) continue;
          const double* from = g.data.data() + r * cols;
          double* to = pg.data.data() + static_cast<size_t>(dst) * cols;
          for (int j = 0; j < cols; ++j) to[j] += from[j];
        }
        return;
      }
      case OpKind::ConcatCols: {
        const int ca = nodes_[static_cast<size_t>(n.parents[0])].shape[1];
        const int cb = nodes_[static_cast<size_t>(n.parents[1])].shape[1];
        const int rows = n.shape[0];
        if (parent_needs(0)) {
          Tensor& pg = parent_grad(0);
          for (int r = 0; r < rows; ++r) {
            const double* from = g.data.data() + static_cast<size_t>(r) * (ca + cb);
            double* to = pg.data.data() + static_cast<size_t>(r) * ca;
            for (int j = 0; j < ca; ++j) to[j] += from[j];
          }
        }
        if (parent_needs(1)) {
          Tensor& pg = parent_grad(1);
          for (int r = 0; r < rows; ++r) {
            const double* from = g.data.data() + static_cast<size_t>(r) * (ca + cb) + ca;
            double* to = pg.data.data() + static_cast<size_t>(r) * cb;
            for (int j = 0; j < cb; ++j) to[j] += from[j];
          }
        }
        return;
      }
      case OpKind::AddRowVec: {
        const int cols = n.shape[1];
        const int rows = n.shape[0];
        if (parent_needs(0)) {
          Tensor& pg = parent_grad(0);
          for (size_t i = 0; i < g.data.size(); ++i) pg.data[i] += g.data[i];
        }
        if (parent_needs(1)) {
          Tensor& pg = parent_grad(1);
          for (int r = 0; r < rows; ++r) {
            const double* from = g.data.data() + static_cast<size_t>(r) * cols;
            for (int j = 0; j < cols; ++j) pg.data[static_cast<size_t>(j)] += from[j];
          }
        }
        return;
      }
      case OpKind::Reshape: {
        if (!parent_needs(0)) return;
        Tensor& pg = parent_grad(0);
        for (size_t i = 0; i < g.data.size(); ++i) pg.data[i] += g.data[i];
        return;
      }
      case OpKind::DxmfApply: {
        const Tensor& k = val(n.parents[0]);
        const Tensor& h = val(n.parents[1]);
        const int c = n.classes;
        const int f = h.shape[1];
        const int rows = h.shape[0];
        if (parent_needs(0)) {
          Tensor& pg = parent_grad(0);
          for (int i = 0; i < rows; ++i) {
            const double* hi = h.data.data() + static_cast<size_t>(i) * f;
            const double* gi = g.data.data() + static_cast<size_t>(i) * c;
            double* ki = pg.data.data() + static_cast<size_t>(i) * f * c;
            for (int p = 0; p < f; ++p) {
              const double hv = hi[p];
              double* kp = ki + static_cast<size_t>(p) * c;
              for (int j = 0; j < c; ++j) kp[j] += gi[j] * hv;
            }
          }
        }
        if (parent_needs(1)) {
          Tensor& pg = parent_grad(1);
          for (int i = 0; i < rows; ++i) {
            const double* ki = k.data.data() + static_cast<size_t>(i) * f * c;
            const double* gi = g.data.data() + static_cast<size_t>(i) * c;
            double* hi = pg.data.data() + static_cast<size_t>(i) * f;
            for (int p = 0; p < f; ++p) {
              const double* kp = ki + static_cast<size_t>(p) * c;
              double s = 0.0;
              for (int j = 0; j < c; ++j) s += gi[j] * kp[j];
              hi[p] += s;
            }
          }
        }
        return;
      }
      default:
        return;
    }
  }

  std::vector<Node> nodes_;
  std::map<std::string, int> leaf_ids_;
  std::vector<Tensor> grads_;
  std::vector<char> grad_set_;
  mutable Tensor grads_cache_zero_;
  bool forward_done_ = false;
  bool backward_done_ = false;
  int forward_upto_ = -1;
};

// Expression sugar for model code.
inline NodeRef operator+(NodeRef a, NodeRef b) { return a.graph->add(a, b); }
inline NodeRef operator-(NodeRef a, NodeRef b) { return a.graph->sub(a, b); }
inline NodeRef operator*(NodeRef a, NodeRef b) { return a.graph->mul(a, b); }
inline NodeRef operator*(NodeRef a, double s) { return a.graph->mul_scalar(a, s); }
inline NodeRef operator*(double s, NodeRef a) { return a.graph->mul_scalar(a, s); }

}  // namespace mx2m
