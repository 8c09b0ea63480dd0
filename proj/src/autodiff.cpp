// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include "simcr/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <string_view>
#include <unordered_set>

namespace simcr::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool t_grad_enabled = true;

[[noreturn]] void shape_fail(const std::string& op, const std::string& what,
                             std::initializer_list<Shape> shapes) {
  std::ostringstream os;
  os << op << ": " << what << " (shapes";
  for (const auto& s : shapes) os << ' ' << shape_str(s);
  os << ')';
  throw ShapeError(os.str());
}

void check_finite(const char* op, std::span<const double> data) {
  // Exponent bits all set means inf or nan.
  constexpr std::uint64_t kExp = 0x7ff0000000000000ULL;
  std::uint64_t bad = 0;
  for (double v : data) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    bad |= static_cast<std::uint64_t>((bits & kExp) == kExp);
  }
  if (bad != 0) throw NumericalError(std::string(op) + ": non-finite output");
}

// Ops that only move or select finite inputs skip the output scan.
bool moves_values(const char* op) {
  static const std::unordered_set<std::string_view> kOps{
      "transpose", "reshape", "concat", "slice", "embedding_lookup", "relu", "max_over_axis"};
  return kOps.count(op) > 0;
}

Tensor make_op(const char* op, Shape shape, Buffer data,
               std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  if (!moves_values(op)) check_finite(op, data);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = false;
  if (t_grad_enabled) {
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    for (const Tensor* t : inputs) node->parents.push_back(t->ptr());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

// Same, for a variable number of inputs.
Tensor make_op_n(const char* op, Shape shape, Buffer data,
                 std::span<const Tensor> inputs, BackwardFn fn) {
  if (!moves_values(op)) check_finite(op, data);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = false;
  if (t_grad_enabled) {
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    for (const Tensor& t : inputs) node->parents.push_back(t.ptr());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

struct AxisSplit {
  std::size_t outer;
  std::size_t n;
  std::size_t inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void check_axis(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    shape_fail(op, "axis " + std::to_string(axis) + " out of range", {shape});
  }
}

// Copies `src` (shape `shape`) into `dst` with axes a1 and a2 swapped;
// `accumulate` adds instead of assigning.
void swap_axes(std::span<const double> src, const Shape& shape, std::size_t a1,
               std::size_t a2, std::span<double> dst, bool accumulate) {
  if (a1 > a2) std::swap(a1, a2);
  // View as [pre, n1, mid, n2, post] -> [pre, n2, mid, n1, post].
  std::size_t pre = 1, mid = 1, post = 1;
  for (std::size_t i = 0; i < a1; ++i) pre *= shape[i];
  for (std::size_t i = a1 + 1; i < a2; ++i) mid *= shape[i];
  for (std::size_t i = a2 + 1; i < shape.size(); ++i) post *= shape[i];
  const std::size_t n1 = shape[a1], n2 = shape[a2];
  const std::size_t s_n2 = post, s_mid = n2 * post, s_n1 = mid * n2 * post;
  const std::size_t s_pre = n1 * s_n1;
  std::size_t o = 0;
  for (std::size_t p = 0; p < pre; ++p) {
    for (std::size_t j = 0; j < n2; ++j) {
      for (std::size_t m = 0; m < mid; ++m) {
        for (std::size_t i = 0; i < n1; ++i) {
          const double* in = src.data() + p * s_pre + i * s_n1 + m * s_mid + j * s_n2;
          double* out = dst.data() + o;
          if (accumulate) {
            for (std::size_t q = 0; q < post; ++q) out[q] += in[q];
          } else {
            std::copy(in, in + post, out);
          }
          o += post;
        }
      }
    }
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Buffer& Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (ad::numel(shape) != data.size()) {
    throw ShapeError("Tensor::from: " + std::to_string(data.size()) +
                     " values for shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data.assign(data.begin(), data.end());
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor of shape " + shape_str(shape()) +
                     " is not a scalar");
  }
  return node_->data[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return {node_->grad.begin(), node_->grad.end()};
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::clone() const {
  auto node = std::make_shared<Node>();
  node->shape = shape();
  node->data = node_->data;
  node->requires_grad = node_->requires_grad;
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward: root must be a scalar, got " +
                     shape_str(shape()));
  }
  if (!requires_grad()) {
    throw std::logic_error("backward: root is not on the tape");
  }
  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !p->is_leaf && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  for (Node* n : order) {
    if (!n->is_leaf) n->grad = {};
  }
  node_->ensure_grad()[0] += 1.0;
  // Intermediate gradients are scratch space, released once propagated.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf) continue;
    if (n->backward && !n->grad.empty()) n->backward(*n);
    n->grad = {};
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) {
  t_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2 || sb.size() > 3) {
    shape_fail("matmul", "unsupported ranks", {sa, sb});
  }
  if (sb.size() == 2) {
    const std::size_t k = sa.back();
    if (sb[0] != k) shape_fail("matmul", "inner dimensions differ", {sa, sb});
    const std::size_t m = a.numel() / k;
    const std::size_t n = sb[1];
    Shape out = sa;
    out.back() = n;
    Buffer c(m * n);
    MutMap(c.data(), m, n).noalias() =
        ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
    return make_op("matmul", std::move(out), std::move(c), {&a, &b},
                   [m, k, n](Node& self) {
                     ConstMap g(self.grad.data(), m, n);
                     Node& pa = *self.parents[0];
                     Node& pb = *self.parents[1];
                     if (pa.requires_grad) {
                       MutMap(pa.ensure_grad().data(), m, k).noalias() +=
                           g * ConstMap(pb.data.data(), k, n).transpose();
                     }
                     if (pb.requires_grad) {
                       MutMap(pb.ensure_grad().data(), k, n).noalias() +=
                           ConstMap(pa.data.data(), m, k).transpose() * g;
                     }
                   });
  }
  if (sa.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1]) {
    shape_fail("matmul", "batched operands do not conform", {sa, sb});
  }
  const std::size_t bs = sa[0], m = sa[1], k = sa[2], n = sb[2];
  Buffer c(bs * m * n);
  for (std::size_t i = 0; i < bs; ++i) {
    MutMap(c.data() + i * m * n, m, n).noalias() =
        ConstMap(a.data().data() + i * m * k, m, k) *
        ConstMap(b.data().data() + i * k * n, k, n);
  }
  return make_op("matmul", {bs, m, n}, std::move(c), {&a, &b},
                 [bs, m, k, n](Node& self) {
                   Node& pa = *self.parents[0];
                   Node& pb = *self.parents[1];
                   for (std::size_t i = 0; i < bs; ++i) {
                     ConstMap g(self.grad.data() + i * m * n, m, n);
                     if (pa.requires_grad) {
                       MutMap(pa.ensure_grad().data() + i * m * k, m, k)
                           .noalias() +=
                           g * ConstMap(pb.data.data() + i * k * n, k, n)
                                   .transpose();
                     }
                     if (pb.requires_grad) {
                       MutMap(pb.ensure_grad().data() + i * k * n, k, n)
                           .noalias() +=
                           ConstMap(pa.data.data() + i * m * k, m, k)
                               .transpose() *
                           g;
                     }
                   }
                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) {
    Buffer out(a.numel());
    const auto da = a.data();
    const auto db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
    return make_op("add", sa, std::move(out), {&a, &b}, [](Node& self) {
      for (int p = 0; p < 2; ++p) {
        Node& in = *self.parents[p];
        if (!in.requires_grad) continue;
        auto& g = in.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    });
  }
  if (sb.size() == 1 && !sa.empty() && sa.back() == sb[0]) {
    const std::size_t d = sb[0];
    const std::size_t rows = a.numel() / d;
    Buffer out(a.numel());
    const auto da = a.data();
    const auto db = b.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < d; ++j) out[r * d + j] = da[r * d + j] + db[j];
    }
    return make_op("add", sa, std::move(out), {&a, &b},
                   [rows, d](Node& self) {
                     Node& pa = *self.parents[0];
                     Node& pb = *self.parents[1];
                     if (pa.requires_grad) {
                       auto& g = pa.ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         g[i] += self.grad[i];
                       }
                     }
                     if (pb.requires_grad) {
                       auto& g = pb.ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < d; ++j) {
                           g[j] += self.grad[r * d + j];
                         }
                       }
                     }
                   });
  }
  shape_fail("add", "shapes do not conform", {sa, sb});
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.empty() || sw.size() != 2 || sx.back() != sw[0] || b.shape() != Shape{sw[1]}) {
    shape_fail("affine", "operands do not conform", {sx, sw, b.shape()});
  }
  const std::size_t k = sw[0], n = sw[1], m = x.numel() / k;
  Shape out = sx;
  out.back() = n;
  Buffer c(m * n);
  MutMap cm(c.data(), m, n);
  cm.noalias() = ConstMap(x.data().data(), m, k) * ConstMap(w.data().data(), k, n);
  const auto db = b.data();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < n; ++j) c[r * n + j] += db[j];
  }
  return make_op("affine", std::move(out), std::move(c), {&x, &w, &b},
                 [m, k, n](Node& self) {
                   ConstMap g(self.grad.data(), m, n);
                   Node& px = *self.parents[0];
                   Node& pw = *self.parents[1];
                   Node& pb = *self.parents[2];
                   if (px.requires_grad) {
                     MutMap(px.ensure_grad().data(), m, k).noalias() +=
                         g * ConstMap(pw.data.data(), k, n).transpose();
                   }
                   if (pw.requires_grad) {
                     MutMap(pw.ensure_grad().data(), k, n).noalias() +=
                         ConstMap(px.data.data(), m, k).transpose() * g;
                   }
                   if (pb.requires_grad) {
                     auto& gb = pb.ensure_grad();
                     for (std::size_t r = 0; r < m; ++r) {
                       for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[r * n + j];
                     }
                   }
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_fail("sub", "shapes differ", {a.shape(), b.shape()});
  }
  Buffer out(a.numel());
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  return make_op("sub", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (int p = 0; p < 2; ++p) {
      Node& in = *self.parents[p];
      if (!in.requires_grad) continue;
      const double sign = p == 0 ? 1.0 : -1.0;
      auto& g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_fail("multiply", "shapes differ", {a.shape(), b.shape()});
  }
  Buffer out(a.numel());
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return make_op("multiply", a.shape(), std::move(out), {&a, &b},
                 [](Node& self) {
                   Node& pa = *self.parents[0];
                   Node& pb = *self.parents[1];
                   if (pa.requires_grad) {
                     auto& g = pa.ensure_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       g[i] += self.grad[i] * pb.data[i];
                     }
                   }
                   if (pb.requires_grad) {
                     auto& g = pb.ensure_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       g[i] += self.grad[i] * pa.data[i];
                     }
                   }
                 });
}

Tensor scale(const Tensor& a, double factor) {
  Buffer out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return make_op("scale", a.shape(), std::move(out), {&a},
                 [factor](Node& self) {
                   auto& g = self.parents[0]->ensure_grad();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     g[i] += factor * self.grad[i];
                   }
                 });
}

Tensor transpose(const Tensor& a, std::size_t axis1, std::size_t axis2) {
  check_axis("transpose", a.shape(), axis1);
  check_axis("transpose", a.shape(), axis2);
  Shape out_shape = a.shape();
  std::swap(out_shape[axis1], out_shape[axis2]);
  Buffer out(a.numel());
  swap_axes(a.data(), a.shape(), axis1, axis2, out, false);
  return make_op("transpose", out_shape, std::move(out), {&a},
                 [axis1, axis2, out_shape](Node& self) {
                   swap_axes(self.grad, out_shape, axis1, axis2,
                             self.parents[0]->ensure_grad(), true);
                 });
}

Tensor transpose_as(const Tensor& a, const Shape& view, std::size_t axis1,
                    std::size_t axis2, Shape out) {
  if (ad::numel(view) != a.numel() || ad::numel(out) != a.numel()) {
    shape_fail("transpose", "element counts differ", {a.shape(), view, out});
  }
  check_axis("transpose", view, axis1);
  check_axis("transpose", view, axis2);
  Shape swapped = view;
  std::swap(swapped[axis1], swapped[axis2]);
  Buffer data(a.numel());
  swap_axes(a.data(), view, axis1, axis2, data, false);
  return make_op("transpose", std::move(out), std::move(data), {&a},
                 [axis1, axis2, swapped](Node& self) {
                   swap_axes(self.grad, swapped, axis1, axis2,
                             self.parents[0]->ensure_grad(), true);
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (ad::numel(shape) != a.numel()) {
    shape_fail("reshape", "element counts differ", {a.shape(), shape});
  }
  Buffer out(a.data().begin(), a.data().end());
  return make_op("reshape", std::move(shape), std::move(out), {&a},
                 [](Node& self) {
                   auto& g = self.parents[0]->ensure_grad();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     g[i] += self.grad[i];
                   }
                 });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  check_axis("concat", first, axis);
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      ok = i == axis || s[i] == first[i];
    }
    if (!ok) shape_fail("concat", "non-concat dimensions differ", {first, s});
    out_shape[axis] += s[axis];
  }
  const AxisSplit split = split_at(out_shape, axis);
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) widths.push_back(p.shape()[axis] * split.inner);
  const std::size_t row = split.n * split.inner;
  Buffer out(ad::numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto src = parts[p].data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(src.begin() + o * widths[p], widths[p],
                  out.begin() + o * row + offset);
    }
    offset += widths[p];
  }
  return make_op_n("concat", out_shape, std::move(out), parts,
                   [widths, row, outer = split.outer](Node& self) {
                     std::size_t off = 0;
                     for (std::size_t p = 0; p < widths.size(); ++p) {
                       Node& in = *self.parents[p];
                       if (in.requires_grad) {
                         auto& g = in.ensure_grad();
                         for (std::size_t o = 0; o < outer; ++o) {
                           for (std::size_t j = 0; j < widths[p]; ++j) {
                             g[o * widths[p] + j] += self.grad[o * row + off + j];
                           }
                         }
                       }
                       off += widths[p];
                     }
                   });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin,
             std::size_t end) {
  check_axis("slice", a.shape(), axis);
  if (begin >= end || end > a.shape()[axis]) {
    shape_fail("slice",
               "range [" + std::to_string(begin) + "," + std::to_string(end) +
                   ") invalid",
               {a.shape()});
  }
  const AxisSplit split = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const std::size_t width = (end - begin) * split.inner;
  const std::size_t row = split.n * split.inner;
  const std::size_t off = begin * split.inner;
  Buffer out(split.outer * width);
  const auto src = a.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(src.begin() + o * row + off, width, out.begin() + o * width);
  }
  return make_op("slice", std::move(out_shape), std::move(out), {&a},
                 [outer = split.outer, width, row, off](Node& self) {
                   auto& g = self.parents[0]->ensure_grad();
                   for (std::size_t o = 0; o < outer; ++o) {
                     for (std::size_t j = 0; j < width; ++j) {
                       g[o * row + off + j] += self.grad[o * width + j];
                     }
                   }
                 });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) {
    shape_fail("embedding_lookup", "table must be rank 2", {table.shape()});
  }
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  for (int id : idx) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("embedding_lookup: token id " +
                              std::to_string(id) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
  }
  Buffer out(idx.size() * d);
  const auto src = table.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(src.begin() + static_cast<std::size_t>(idx[r]) * d, d,
                out.begin() + r * d);
  }
  return make_op("embedding_lookup", {idx.size(), d}, std::move(out), {&table},
                 [idx, d](Node& self) {
                   auto& g = self.parents[0]->ensure_grad();
                   for (std::size_t r = 0; r < idx.size(); ++r) {
                     const std::size_t base = static_cast<std::size_t>(idx[r]) * d;
                     for (std::size_t j = 0; j < d; ++j) {
                       g[base + j] += self.grad[r * d + j];
                     }
                   }
                 });
}

std::size_t conv1d_out_len(std::size_t len, std::size_t kernel,
                           const Conv1dSpec& spec) {
  const std::size_t padded = len + 2 * spec.padding;
  if (spec.stride == 0 || padded < kernel) return 0;
  return (padded - kernel) / spec.stride + 1;
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv1dSpec& spec) {
  const bool batched = x.rank() == 3;
  if ((x.rank() != 2 && x.rank() != 3) || weight.rank() != 3 ||
      bias.rank() != 1) {
    shape_fail("conv1d", "expected x [B,T,C] or [T,C], weight [O,C,K]",
               {x.shape(), weight.shape(), bias.shape()});
  }
  const std::size_t bs = batched ? x.dim(0) : 1;
  const std::size_t len = x.dim(x.rank() - 2);
  const std::size_t cin = x.dim(x.rank() - 1);
  const std::size_t cout = weight.dim(0), kernel = weight.dim(2);
  if (weight.dim(1) != cin || bias.dim(0) != cout) {
    shape_fail("conv1d", "channel counts do not conform",
               {x.shape(), weight.shape(), bias.shape()});
  }
  const std::size_t out_len = conv1d_out_len(len, kernel, spec);
  if (out_len == 0) {
    shape_fail("conv1d", "input too short for kernel", {x.shape(), weight.shape()});
  }
  const std::size_t stride = spec.stride, pad = spec.padding;
  const std::size_t ck = cin * kernel;
  const std::size_t rows = bs * out_len;
  // im2col: cols[(b,t), (c,k)] = x[b, t*stride + k - pad, c]
  auto cols = std::make_shared<std::vector<double>>(rows * ck, 0.0);
  const auto xd = x.data();
  for (std::size_t b = 0; b < bs; ++b) {
    for (std::size_t t = 0; t < out_len; ++t) {
      double* dst = cols->data() + (b * out_len + t) * ck;
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + k) -
                                   static_cast<std::ptrdiff_t>(pad);
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
        const double* src = xd.data() + (b * len + static_cast<std::size_t>(pos)) * cin;
        for (std::size_t c = 0; c < cin; ++c) dst[c * kernel + k] = src[c];
      }
    }
  }
  Buffer out(rows * cout);
  MutMap om(out.data(), rows, cout);
  om.noalias() = ConstMap(cols->data(), rows, ck) *
                 ConstMap(weight.data().data(), cout, ck).transpose();
  const auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < cout; ++o) out[r * cout + o] += bd[o];
  }
  Shape out_shape = batched ? Shape{bs, out_len, cout} : Shape{out_len, cout};
  return make_op(
      "conv1d", std::move(out_shape), std::move(out), {&x, &weight, &bias},
      [=](Node& self) {
        ConstMap g(self.grad.data(), rows, cout);
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        Node& pb = *self.parents[2];
        if (pw.requires_grad) {
          MutMap(pw.ensure_grad().data(), cout, ck).noalias() +=
              g.transpose() * ConstMap(cols->data(), rows, ck);
        }
        if (pb.requires_grad) {
          auto& gb = pb.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < cout; ++o) gb[o] += self.grad[r * cout + o];
          }
        }
        if (px.requires_grad) {
          Buffer dcols(rows * ck);
          MutMap(dcols.data(), rows, ck).noalias() =
              g * ConstMap(pw.data.data(), cout, ck);
          auto& gx = px.ensure_grad();
          for (std::size_t b = 0; b < bs; ++b) {
            for (std::size_t t = 0; t < out_len; ++t) {
              const double* src = dcols.data() + (b * out_len + t) * ck;
              for (std::size_t k = 0; k < kernel; ++k) {
                const std::ptrdiff_t pos =
                    static_cast<std::ptrdiff_t>(t * stride + k) -
                    static_cast<std::ptrdiff_t>(pad);
                if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
                double* dst = gx.data() + (b * len + static_cast<std::size_t>(pos)) * cin;
                for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c * kernel + k];
              }
            }
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.rank() == 0 || gain.shape() != Shape{x.shape().back()} ||
      bias.shape() != gain.shape()) {
    shape_fail("layer_norm", "gain/bias must match the last dimension",
               {x.shape(), gain.shape(), bias.shape()});
  }
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Buffer out(x.numel());
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = gd[j] * h + bd[j];
    }
  }
  return make_op(
      "layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
      [xhat, inv_std, rows, d](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const auto& g = self.grad;
        if (pg.requires_grad) {
          auto& gg = pg.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * (*xhat)[i];
        }
        if (pb.requires_grad) {
          auto& gb = pb.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
        }
        if (px.requires_grad) {
          auto& gx = px.ensure_grad();
          const double nd = static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * pg.data[j];
              sum_dh += dh;
              sum_dh_h += dh * (*xhat)[r * d + j];
            }
            const double is = (*inv_std)[r];
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * pg.data[j];
              gx[r * d + j] +=
                  is / nd * (nd * dh - sum_dh - (*xhat)[r * d + j] * sum_dh_h);
            }
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  Buffer out(x.data().begin(), x.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_op("relu", x.shape(), std::move(out), {&x}, [](Node& self) {
    Node& px = *self.parents[0];
    auto& g = px.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (px.data[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor exp(const Tensor& x) {
  Buffer out(x.data().begin(), x.data().end());
  for (double& v : out) v = std::exp(v);
  return make_op("exp", x.shape(), std::move(out), {&x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.data[i];
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_axis("softmax", x.shape(), axis);
  const AxisSplit s = split_at(x.shape(), axis);
  Buffer out(x.numel());
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double mx = xd[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, xd[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(xd[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= z;
    }
  }
  return make_op("softmax", x.shape(), std::move(out), {&x}, [s](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t k = base + j * s.inner;
          dot += self.grad[k] * y[k];
        }
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t k = base + j * s.inner;
          g[k] += y[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  check_axis("log_softmax", x.shape(), axis);
  const AxisSplit s = split_at(x.shape(), axis);
  Buffer out(x.numel());
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double mx = xd[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, xd[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) z += std::exp(xd[base + j * s.inner] - mx);
      const double lz = mx + std::log(z);
      for (std::size_t j = 0; j < s.n; ++j) {
        out[base + j * s.inner] = xd[base + j * s.inner] - lz;
      }
    }
  }
  return make_op("log_softmax", x.shape(), std::move(out), {&x}, [s](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        double gsum = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) gsum += self.grad[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t k = base + j * s.inner;
          g[k] += self.grad[k] - std::exp(y[k]) * gsum;
        }
      }
    }
  });
}

Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask,
                   double value) {
  if (mask.size() != x.numel()) {
    shape_fail("masked_fill",
               "mask has " + std::to_string(mask.size()) + " entries",
               {x.shape()});
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  Buffer out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (m[i]) out[i] = value;
  }
  return make_op("masked_fill", x.shape(), std::move(out), {&x},
                 [m = std::move(m)](Node& self) {
                   auto& g = self.parents[0]->ensure_grad();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     if (!m[i]) g[i] += self.grad[i];
                   }
                 });
}

Tensor reduce_sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_op("reduce_sum", {}, {total}, {&x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor reduce_sum(const Tensor& x, std::size_t axis) {
  check_axis("reduce_sum", x.shape(), axis);
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Buffer out(s.outer * s.inner, 0.0);
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.n; ++j) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        out[o * s.inner + i] += xd[(o * s.n + j) * s.inner + i];
      }
    }
  }
  return make_op("reduce_sum", std::move(out_shape), std::move(out), {&x},
                 [s](Node& self) {
                   auto& g = self.parents[0]->ensure_grad();
                   for (std::size_t o = 0; o < s.outer; ++o) {
                     for (std::size_t j = 0; j < s.n; ++j) {
                       for (std::size_t i = 0; i < s.inner; ++i) {
                         g[(o * s.n + j) * s.inner + i] += self.grad[o * s.inner + i];
                       }
                     }
                   }
                 });
}

Tensor reduce_mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("reduce_mean: empty tensor");
  return scale(reduce_sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reduce_mean(const Tensor& x, std::size_t axis) {
  check_axis("reduce_mean", x.shape(), axis);
  return scale(reduce_sum(x, axis), 1.0 / static_cast<double>(x.shape()[axis]));
}

Tensor max_over_axis(const Tensor& x, std::size_t axis) {
  check_axis("max_over_axis", x.shape(), axis);
  const AxisSplit s = split_at(x.shape(), axis);
  if (s.n == 0) shape_fail("max_over_axis", "empty axis", {x.shape()});
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Buffer out(s.outer * s.inner);
  std::vector<std::size_t> arg(out.size());
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = o * s.n * s.inner + i;
      for (std::size_t j = 1; j < s.n; ++j) {
        const std::size_t k = (o * s.n + j) * s.inner + i;
        if (xd[k] > xd[best]) best = k;
      }
      out[o * s.inner + i] = xd[best];
      arg[o * s.inner + i] = best;
    }
  }
  return make_op("max_over_axis", std::move(out_shape), std::move(out), {&x},
                 [arg = std::move(arg)](Node& self) {
                   auto& g = self.parents[0]->ensure_grad();
                   for (std::size_t i = 0; i < arg.size(); ++i) {
                     g[arg[i]] += self.grad[i];
                   }
                 });
}

Tensor detach(const Tensor& x) {
  auto node = std::make_shared<Node>();
  node->shape = x.shape();
  node->data = x.node()->data;
  return Tensor(std::move(node));
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument("dropout: p must lie in [0, 1), got " +
                                std::to_string(p));
  }
  if (p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  Buffer out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_op("dropout", x.shape(), std::move(out), {&x},
                 [mask = std::move(mask)](Node& self) {
                   auto& g = self.parents[0]->ensure_grad();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     g[i] += self.grad[i] * mask[i];
                   }
                 });
}

}  // namespace simcr::ad
