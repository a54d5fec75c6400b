#include "ebt/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "ebt/errors.hpp"

namespace ebt::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_mat(const Tensor& t) { return ConstMatMap(t.data().data(), t.rows(), t.cols()); }
MatMap as_mat(Tensor& t) { return MatMap(t.data().data(), t.rows(), t.cols()); }

Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid()) throw ContractError(std::string(op) + ": unbound operand");
  if (a.tape() != b.tape()) throw ContractError(std::string(op) + ": operands on different tapes");
  return *a.tape();
}

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                   shape_string(b.shape()));
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

Tensor scalar(double v) { return Tensor({1}, v); }

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) shape_mismatch("matmul", av, bv);
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  as_mat(out).noalias() = as_mat(av) * as_mat(bv);
  const auto ia = a.id(), ib = b.id();
  return tape.record(std::move(out), tape.needs_grad(ia) || tape.needs_grad(ib),
                     [ia, ib](Tape& t, std::size_t self) {
                       auto g = as_mat(t.grad(self));
                       if (t.needs_grad(ia)) as_mat(t.grad_accum(ia)).noalias() += g * as_mat(t.value(ib)).transpose();
                       if (t.needs_grad(ib)) as_mat(t.grad_accum(ib)).noalias() += as_mat(t.value(ia)).transpose() * g;
                     },
                     "matmul");
}

Var matmul_nt(Var a, Var b) {
  Tape& tape = same_tape(a, b, "matmul_nt");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols()) shape_mismatch("matmul_nt", av, bv);
  Tensor out = Tensor::matrix(av.rows(), bv.rows());
  as_mat(out).noalias() = as_mat(av) * as_mat(bv).transpose();
  const auto ia = a.id(), ib = b.id();
  return tape.record(std::move(out), tape.needs_grad(ia) || tape.needs_grad(ib),
                     [ia, ib](Tape& t, std::size_t self) {
                       auto g = as_mat(t.grad(self));
                       if (t.needs_grad(ia)) as_mat(t.grad_accum(ia)).noalias() += g * as_mat(t.value(ib));
                       if (t.needs_grad(ib)) as_mat(t.grad_accum(ib)).noalias() += g.transpose() * as_mat(t.value(ia));
                     },
                     "matmul_nt");
}

namespace {

template <typename Fwd, typename GradA, typename GradB>
Var binary_elementwise(Var a, Var b, const char* op, Fwd fwd, GradA grad_a, GradB grad_b) {
  Tape& tape = same_tape(a, b, op);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) shape_mismatch(op, av, bv);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  const auto ia = a.id(), ib = b.id();
  return tape.record(std::move(out), tape.needs_grad(ia) || tape.needs_grad(ib),
                     [ia, ib, grad_a, grad_b](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       const Tensor& x = t.value(ia);
                       const Tensor& y = t.value(ib);
                       if (t.needs_grad(ia)) {
                         Tensor& ga = t.grad_accum(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += grad_a(g[i], x[i], y[i]);
                       }
                       if (t.needs_grad(ib)) {
                         Tensor& gb = t.grad_accum(ib);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += grad_b(g[i], x[i], y[i]);
                       }
                     },
                     op);
}

}  // namespace

Var add(Var a, Var b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Var sub(Var a, Var b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

Var mul(Var a, Var b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Var add_bias(Var x, Var b) {
  Tape& tape = same_tape(x, b, "add_bias");
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  require_matrix("add_bias", xv);
  if (bv.size() != xv.cols()) shape_mismatch("add_bias", xv, bv);
  Tensor out = xv;
  const std::size_t n = xv.rows(), d = xv.cols();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out(r, c) += bv[c];
  const auto ix = x.id(), ib = b.id();
  return tape.record(std::move(out), tape.needs_grad(ix) || tape.needs_grad(ib),
                     [ix, ib, n, d](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       if (t.needs_grad(ix)) {
                         Tensor& gx = t.grad_accum(ix);
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       }
                       if (t.needs_grad(ib)) {
                         Tensor& gb = t.grad_accum(ib);
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t c = 0; c < d; ++c) gb[c] += g(r, c);
                       }
                     },
                     "add_bias");
}

Var mul_cols(Var x, Var gain) {
  Tape& tape = same_tape(x, gain, "mul_cols");
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  require_matrix("mul_cols", xv);
  if (gv.size() != xv.cols()) shape_mismatch("mul_cols", xv, gv);
  Tensor out = xv;
  const std::size_t n = xv.rows(), d = xv.cols();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out(r, c) *= gv[c];
  const auto ix = x.id(), ig = gain.id();
  return tape.record(std::move(out), tape.needs_grad(ix) || tape.needs_grad(ig),
                     [ix, ig, n, d](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       const Tensor& xv = t.value(ix);
                       const Tensor& gv = t.value(ig);
                       if (t.needs_grad(ix)) {
                         Tensor& gx = t.grad_accum(ix);
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t c = 0; c < d; ++c) gx(r, c) += g(r, c) * gv[c];
                       }
                       if (t.needs_grad(ig)) {
                         Tensor& gg = t.grad_accum(ig);
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t c = 0; c < d; ++c) gg[c] += g(r, c) * xv(r, c);
                       }
                     },
                     "mul_cols");
}

Var relu(Var x) {
  Tape& tape = *x.tape();
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  const auto ix = x.id();
  return tape.record(std::move(out), tape.needs_grad(ix),
                     [ix](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       const Tensor& xv = t.value(ix);
                       Tensor& gx = t.grad_accum(ix);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (xv[i] > 0.0) gx[i] += g[i];
                     },
                     "relu");
}

Var softmax_rows(Var x) {
  Tape& tape = *x.tape();
  const Tensor& xv = x.value();
  require_matrix("softmax_rows", xv);
  Tensor out = xv;
  const std::size_t n = xv.rows(), d = xv.cols();
  for (std::size_t r = 0; r < n; ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (auto& v : row) v /= total;
  }
  const auto ix = x.id();
  return tape.record(std::move(out), tape.needs_grad(ix),
                     [ix, n, d](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       const Tensor& y = t.value(self);
                       Tensor& gx = t.grad_accum(ix);
                       for (std::size_t r = 0; r < n; ++r) {
                         double inner = 0.0;
                         for (std::size_t c = 0; c < d; ++c) inner += g(r, c) * y(r, c);
                         for (std::size_t c = 0; c < d; ++c) gx(r, c) += y(r, c) * (g(r, c) - inner);
                       }
                     },
                     "softmax_rows");
}

Var center_rows(Var x) {
  Tape& tape = *x.tape();
  const Tensor& xv = x.value();
  require_matrix("center_rows", xv);
  Tensor out = xv;
  const std::size_t n = xv.rows(), d = xv.cols();
  for (std::size_t r = 0; r < n; ++r) {
    auto row = out.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    for (auto& v : row) v -= mean;
  }
  const auto ix = x.id();
  return tape.record(std::move(out), tape.needs_grad(ix),
                     [ix, n, d](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       Tensor& gx = t.grad_accum(ix);
                       for (std::size_t r = 0; r < n; ++r) {
                         double mean = 0.0;
                         for (std::size_t c = 0; c < d; ++c) mean += g(r, c);
                         mean /= static_cast<double>(d);
                         for (std::size_t c = 0; c < d; ++c) gx(r, c) += g(r, c) - mean;
                       }
                     },
                     "center_rows");
}

Var clip_rows_to_ball(Var x, double radius) {
  if (!(radius > 0.0)) throw ContractError("clip_rows_to_ball: radius must be positive");
  Tape& tape = *x.tape();
  const Tensor& xv = x.value();
  require_matrix("clip_rows_to_ball", xv);
  Tensor out = xv;
  const std::size_t n = xv.rows(), d = xv.cols();
  std::vector<double> norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = out.row(r);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    norms[r] = std::sqrt(sq);
    if (norms[r] > radius) {
      const double s = radius / norms[r];
      for (auto& v : row) v *= s;
    }
  }
  const auto ix = x.id();
  return tape.record(std::move(out), tape.needs_grad(ix),
                     [ix, n, d, radius, norms = std::move(norms)](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       const Tensor& xv = t.value(ix);
                       Tensor& gx = t.grad_accum(ix);
                       for (std::size_t r = 0; r < n; ++r) {
                         const double nrm = norms[r];
                         if (nrm <= radius) {
                           for (std::size_t c = 0; c < d; ++c) gx(r, c) += g(r, c);
                           continue;
                         }
                         // y = R x / |x|  =>  J = (R/|x|) (I - x xᵀ/|x|²)
                         double gx_dot = 0.0;
                         for (std::size_t c = 0; c < d; ++c) gx_dot += g(r, c) * xv(r, c);
                         const double s = radius / nrm;
                         const double proj = gx_dot / (nrm * nrm);
                         for (std::size_t c = 0; c < d; ++c) gx(r, c) += s * (g(r, c) - proj * xv(r, c));
                       }
                     },
                     "clip_rows_to_ball");
}

Var sum_sq(Var x) {
  Tape& tape = *x.tape();
  double total = 0.0;
  for (double v : x.value().data()) total += v * v;
  const auto ix = x.id();
  return tape.record(scalar(total), tape.needs_grad(ix),
                     [ix](Tape& t, std::size_t self) {
                       const double g = t.grad(self)[0];
                       const Tensor& xv = t.value(ix);
                       Tensor& gx = t.grad_accum(ix);
                       for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += 2.0 * g * xv[i];
                     },
                     "sum_sq");
}

Var sum(Var x) {
  Tape& tape = *x.tape();
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const auto ix = x.id();
  return tape.record(scalar(total), tape.needs_grad(ix),
                     [ix](Tape& t, std::size_t self) {
                       const double g = t.grad(self)[0];
                       Tensor& gx = t.grad_accum(ix);
                       for (auto& v : gx.data()) v += g;
                     },
                     "sum");
}

Var dot(Var x, Var y) {
  Tape& tape = same_tape(x, y, "dot");
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  if (xv.size() != yv.size()) shape_mismatch("dot", xv, yv);
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) total += xv[i] * yv[i];
  const auto ix = x.id(), iy = y.id();
  return tape.record(scalar(total), tape.needs_grad(ix) || tape.needs_grad(iy),
                     [ix, iy](Tape& t, std::size_t self) {
                       const double g = t.grad(self)[0];
                       const Tensor& xv = t.value(ix);
                       const Tensor& yv = t.value(iy);
                       if (t.needs_grad(ix)) {
                         Tensor& gx = t.grad_accum(ix);
                         for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g * yv[i];
                       }
                       if (t.needs_grad(iy)) {
                         Tensor& gy = t.grad_accum(iy);
                         for (std::size_t i = 0; i < xv.size(); ++i) gy[i] += g * xv[i];
                       }
                     },
                     "dot");
}

Var scale(Var x, double c) {
  Tape& tape = *x.tape();
  Tensor out = x.value();
  for (auto& v : out.data()) v *= c;
  const auto ix = x.id();
  return tape.record(std::move(out), tape.needs_grad(ix),
                     [ix, c](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       Tensor& gx = t.grad_accum(ix);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
                     },
                     "scale");
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& tape = *parts.front().tape();
  const std::size_t n = parts.front().value().rows();
  std::size_t total_cols = 0;
  bool needs = false;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    if (p.tape() != &tape) throw ContractError("concat_cols: operands on different tapes");
    const Tensor& v = p.value();
    require_matrix("concat_cols", v);
    if (v.rows() != n) shape_mismatch("concat_cols", parts.front().value(), v);
    total_cols += v.cols();
    needs = needs || tape.needs_grad(p.id());
    ids.push_back(p.id());
    widths.push_back(v.cols());
  }
  Tensor out = Tensor::matrix(n, total_cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < n; ++r)
      std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
    offset += v.cols();
  }
  return tape.record(std::move(out), needs,
                     [ids = std::move(ids), widths = std::move(widths), n](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (t.needs_grad(ids[k])) {
                           Tensor& gk = t.grad_accum(ids[k]);
                           for (std::size_t r = 0; r < n; ++r)
                             for (std::size_t c = 0; c < widths[k]; ++c) gk(r, c) += g(r, off + c);
                         }
                         off += widths[k];
                       }
                     },
                     "concat_cols");
}

}  // namespace ebt::ad
