#include "cigli/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cigli::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Input i of a node when it participates in the backward pass.
Node* grad_input(Node& n, std::size_t i) {
  if (i >= n.inputs.size()) return nullptr;
  Node* in = n.inputs[i].get();
  if (!in->requires_grad) return nullptr;
  in->ensure_grad();
  return in;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, int r, const char* op) {
  if (a.rank() != r) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                                shape_str(a.shape()));
  }
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  Tensor out = make_result(a.shape(), {a});
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = fwd(src[i]);
  if (out.requires_grad()) {
    // deriv(x, y) gets both the input and the output value.
    out.node()->backward_fn = [deriv](Node& n) {
      Node* x = grad_input(n, 0);
      if (!x) return;
      for (std::size_t i = 0; i < n.value.size(); ++i) x->grad[i] += n.grad[i] * deriv(x->value[i], n.value[i]);
    };
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = make_result(a.shape(), {a, b});
  auto x = a.data(), y = b.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [](Node& n) {
      for (std::size_t k = 0; k < 2; ++k) {
        if (Node* in = grad_input(n, k)) {
          for (std::size_t i = 0; i < n.grad.size(); ++i) in->grad[i] += n.grad[i];
        }
      }
    };
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = make_result(a.shape(), {a, b});
  auto x = a.data(), y = b.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [](Node& n) {
      if (Node* in = grad_input(n, 0)) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) in->grad[i] += n.grad[i];
      }
      if (Node* in = grad_input(n, 1)) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) in->grad[i] -= n.grad[i];
      }
    };
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = make_result(a.shape(), {a, b});
  auto x = a.data(), y = b.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [](Node& n) {
      const auto& xv = n.inputs[0]->value;
      const auto& yv = n.inputs[1]->value;
      if (Node* in = grad_input(n, 0)) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) in->grad[i] += n.grad[i] * yv[i];
      }
      if (Node* in = grad_input(n, 1)) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) in->grad[i] += n.grad[i] * xv[i];
      }
    };
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary(
      a, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw std::invalid_argument("matmul: inner dimensions differ");
  Tensor out = make_result({m, n}, {a, b});
  MapMat(out.data().data(), m, n).noalias() = ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, k, n](Node& node) {
      ConstMapMat g(node.grad.data(), m, n);
      if (Node* x = grad_input(node, 0)) {
        MapMat(x->grad.data(), m, k).noalias() += g * ConstMapMat(node.inputs[1]->value.data(), k, n).transpose();
      }
      if (Node* y = grad_input(node, 1)) {
        MapMat(y->grad.data(), k, n).noalias() += ConstMapMat(node.inputs[0]->value.data(), m, k).transpose() * g;
      }
    };
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const int batch = x.dim(0), in = x.dim(1), outf = weight.dim(0);
  if (weight.dim(1) != in) {
    throw std::invalid_argument("linear: input width " + std::to_string(in) + " does not match weight " +
                                shape_str(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != outf)) throw std::invalid_argument("linear: bias shape");

  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  Tensor out = make_result({batch, outf}, inputs);
  MapMat y(out.data().data(), batch, outf);
  y.noalias() = ConstMapMat(x.data().data(), batch, in) * ConstMapMat(weight.data().data(), outf, in).transpose();
  if (has_bias) {
    Eigen::Map<const Eigen::RowVectorXd> bv(bias.data().data(), outf);
    y.rowwise() += bv;
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [batch, in, outf](Node& n) {
      ConstMapMat g(n.grad.data(), batch, outf);
      if (Node* xi = grad_input(n, 0)) {
        MapMat(xi->grad.data(), batch, in).noalias() += g * ConstMapMat(n.inputs[1]->value.data(), outf, in);
      }
      if (Node* wi = grad_input(n, 1)) {
        MapMat(wi->grad.data(), outf, in).noalias() += g.transpose() * ConstMapMat(n.inputs[0]->value.data(), batch, in);
      }
      if (Node* bi = grad_input(n, 2)) {
        Eigen::Map<Eigen::RowVectorXd>(bi->grad.data(), outf) += g.colwise().sum();
      }
    };
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (first.size() < 2) throw std::invalid_argument("concat: inputs need rank >= 2");
  std::size_t inner = 1;
  for (std::size_t d = 2; d < first.size(); ++d) inner *= static_cast<std::size_t>(first[d]);
  int total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || s[0] != first[0] || !std::equal(s.begin() + 2, s.end(), first.begin() + 2)) {
      throw std::invalid_argument("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    }
    total += s[1];
  }
  Shape out_shape = first;
  out_shape[1] = total;
  Tensor out = make_result(out_shape, parts);
  const std::size_t rows = static_cast<std::size_t>(first[0]);
  const std::size_t out_row = static_cast<std::size_t>(total) * inner;
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = static_cast<std::size_t>(p.dim(1)) * inner;
    auto src = p.data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  out.data().begin() + static_cast<std::ptrdiff_t>(r * out_row + offset));
    }
    widths.push_back(w);
    offset += w;
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [widths, rows, out_row](Node& n) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        const std::size_t w = widths[k];
        if (Node* in = grad_input(n, k)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < w; ++i) in->grad[r * w + i] += n.grad[r * out_row + off + i];
        }
        off += w;
      }
    };
  }
  return out;
}

Tensor slice(const Tensor& a, int start, int length) {
  if (a.rank() < 2) throw std::invalid_argument("slice: rank >= 2 required");
  if (start < 0 || length < 0 || start + length > a.dim(1)) throw std::out_of_range("slice: range outside axis 1");
  std::size_t inner = 1;
  for (int d = 2; d < a.rank(); ++d) inner *= static_cast<std::size_t>(a.dim(d));
  Shape out_shape = a.shape();
  out_shape[1] = length;
  Tensor out = make_result(out_shape, {a});
  const std::size_t rows = static_cast<std::size_t>(a.dim(0));
  const std::size_t in_row = static_cast<std::size_t>(a.dim(1)) * inner;
  const std::size_t w = static_cast<std::size_t>(length) * inner;
  const std::size_t off = static_cast<std::size_t>(start) * inner;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < w; ++i) out.data()[r * w + i] = a.data()[r * in_row + off + i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [rows, in_row, w, off](Node& n) {
      if (Node* in = grad_input(n, 0)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < w; ++i) in->grad[r * in_row + off + i] += n.grad[r * w + i];
      }
    };
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Tensor out = make_result(std::move(shape), {a});
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  if (out.requires_grad()) {
    out.node()->backward_fn = [](Node& n) {
      if (Node* in = grad_input(n, 0)) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) in->grad[i] += n.grad[i];
      }
    };
  }
  return out;
}

namespace {

struct ConvGeom {
  int cin, h, w, k, ho, wo, stride, padding;
};

// One image [cin,h,w] -> col [(c,ky,kx), (oy,ox)].
void im2col(const ConvGeom& g, const double* src, double* col) {
  const int plane = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    const double* s = src + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* dst = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          double* row = dst + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(row, g.wo, 0.0);
            continue;
          }
          const double* srow = s + iy * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            row[ox] = (ix >= 0 && ix < g.w) ? srow[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const double* col, double* dst) {
  const int plane = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    double* d = dst + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* src = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.h) continue;
          double* drow = d + iy * g.w;
          const double* srow = src + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != k) {
    throw std::invalid_argument("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                                shape_str(x.shape()));
  }
  if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: bad stride/padding");
  const int ho = (h + 2 * padding - k) / stride + 1;
  const int wo = (w + 2 * padding - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != cout)) throw std::invalid_argument("conv2d: bias shape");

  const int kk = cin * k * k;
  const int plane = ho * wo;

  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  Tensor out = make_result({batch, cout, ho, wo}, inputs);
  const ConvGeom geom{cin, h, w, k, ho, wo, stride, padding};
  // Per-image GEMM keeps the im2col buffer small: out[b] = W [cout, kk] * col_b [kk, plane].
  Buffer col(static_cast<std::size_t>(kk) * static_cast<std::size_t>(plane));
  const ConstMapMat wmat(weight.data().data(), cout, kk);
  for (int b = 0; b < batch; ++b) {
    im2col(geom, x.data().data() + static_cast<std::size_t>(b) * cin * h * w, col.data());
    MapMat y(out.data().data() + static_cast<std::size_t>(b) * cout * plane, cout, plane);
    y.noalias() = wmat * ConstMapMat(col.data(), kk, plane);
    if (has_bias) y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data().data(), cout);
  }

  if (out.requires_grad()) {
    out.node()->backward_fn = [geom, batch, cout, kk, plane](Node& n) {
      Node* xi = grad_input(n, 0);
      Node* wi = grad_input(n, 1);
      Node* bi = grad_input(n, 2);
      const std::size_t in_plane = static_cast<std::size_t>(geom.cin) * geom.h * geom.w;
      Buffer col(static_cast<std::size_t>(kk) * static_cast<std::size_t>(plane));
      RowMat dcol;
      const ConstMapMat wmat(n.inputs[1]->value.data(), cout, kk);
      for (int b = 0; b < batch; ++b) {
        const ConstMapMat g(n.grad.data() + static_cast<std::size_t>(b) * cout * plane, cout, plane);
        if (wi) {
          im2col(geom, n.inputs[0]->value.data() + b * in_plane, col.data());
          MapMat(wi->grad.data(), cout, kk).noalias() += g * ConstMapMat(col.data(), kk, plane).transpose();
        }
        if (bi) Eigen::Map<Eigen::VectorXd>(bi->grad.data(), cout) += g.rowwise().sum();
        if (xi) {
          dcol.noalias() = wmat.transpose() * g;
          col2im_add(geom, dcol.data(), xi->grad.data() + b * in_plane);
        }
      }
    };
  }
  return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
  require_rank(x, 4, "upsample_nearest2x");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = make_result({b, c, 2 * h, 2 * w}, {x});
  const std::size_t planes = static_cast<std::size_t>(b) * c;
  const double* src = x.data().data();
  double* dst = out.data().data();
  for (std::size_t p = 0; p < planes; ++p)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        dst[(p * 2 * h + y) * 2 * w + xx] = src[(p * h + y / 2) * w + xx / 2];
  if (out.requires_grad()) {
    out.node()->backward_fn = [planes, h, w](Node& n) {
      if (Node* in = grad_input(n, 0)) {
        for (std::size_t p = 0; p < planes; ++p)
          for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx)
              in->grad[(p * h + y / 2) * w + xx / 2] += n.grad[(p * 2 * h + y) * 2 * w + xx];
      }
    };
  }
  return out;
}

Tensor modulate(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  require_rank(x, 4, "modulate");
  require_rank(gamma, 2, "modulate");
  require_same_shape(gamma, beta, "modulate");
  const int b = x.dim(0), c = x.dim(1);
  if (gamma.dim(0) != b || gamma.dim(1) != c) {
    throw std::invalid_argument("modulate: gamma " + shape_str(gamma.shape()) + " vs features " +
                                shape_str(x.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor out = make_result(x.shape(), {x, gamma, beta});
  for (std::size_t p = 0; p < static_cast<std::size_t>(b) * c; ++p) {
    const double g = gamma.data()[p], s = beta.data()[p];
    for (std::size_t i = 0; i < plane; ++i) out.data()[p * plane + i] = g * x.data()[p * plane + i] + s;
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [plane](Node& n) {
      const auto& xv = n.inputs[0]->value;
      const auto& gv = n.inputs[1]->value;
      Node* xi = grad_input(n, 0);
      Node* gi = grad_input(n, 1);
      Node* bi = grad_input(n, 2);
      for (std::size_t p = 0; p < gv.size(); ++p) {
        double dg = 0.0, db = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          const double go = n.grad[p * plane + i];
          dg += go * xv[p * plane + i];
          db += go;
          if (xi) xi->grad[p * plane + i] += go * gv[p];
        }
        if (gi) gi->grad[p] += dg;
        if (bi) bi->grad[p] += db;
      }
    };
  }
  return out;
}

Tensor replicate_spatial(const Tensor& c, int height, int width) {
  require_rank(c, 2, "replicate_spatial");
  const int b = c.dim(0), d = c.dim(1);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  Tensor out = make_result({b, d, height, width}, {c});
  for (std::size_t p = 0; p < static_cast<std::size_t>(b) * d; ++p)
    std::fill_n(out.data().begin() + static_cast<std::ptrdiff_t>(p * plane), plane, c.data()[p]);
  if (out.requires_grad()) {
    out.node()->backward_fn = [plane](Node& n) {
      if (Node* in = grad_input(n, 0)) {
        for (std::size_t p = 0; p < in->grad.size(); ++p) {
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += n.grad[p * plane + i];
          in->grad[p] += s;
        }
      }
    };
  }
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = make_result({1}, {a});
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.data()[0] = s;
  if (out.requires_grad()) {
    out.node()->backward_fn = [](Node& n) {
      if (Node* in = grad_input(n, 0)) {
        for (double& g : in->grad) g += n.grad[0];
      }
    };
  }
  return out;
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor index_rows(const Tensor& a, std::span<const int> rows) {
  if (a.rank() < 1) throw std::invalid_argument("index_rows: rank >= 1 required");
  const std::size_t row = a.size() / static_cast<std::size_t>(a.dim(0));
  Shape out_shape = a.shape();
  out_shape[0] = static_cast<int>(rows.size());
  for (int r : rows)
    if (r < 0 || r >= a.dim(0)) throw std::out_of_range("index_rows: row index out of range");
  Tensor out = make_result(out_shape, {a});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(rows[i]) * row), row,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * row));
  if (out.requires_grad()) {
    out.node()->backward_fn = [idx = std::vector<int>(rows.begin(), rows.end()), row](Node& n) {
      if (Node* in = grad_input(n, 0)) {
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t j = 0; j < row; ++j) in->grad[static_cast<std::size_t>(idx[i]) * row + j] += n.grad[i * row + j];
      }
    };
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) { return index_rows(table, ids); }

Tensor where_rows(std::span<const char> mask, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "where_rows");
  if (a.rank() < 1 || static_cast<int>(mask.size()) != a.dim(0)) throw std::invalid_argument("where_rows: mask size");
  const std::size_t row = a.size() / mask.size();
  Tensor out = make_result(a.shape(), {a, b});
  for (std::size_t r = 0; r < mask.size(); ++r) {
    const auto& src = mask[r] ? a.data() : b.data();
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * row), row,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * row));
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [m = std::vector<char>(mask.begin(), mask.end()), row](Node& n) {
      Node* ai = grad_input(n, 0);
      Node* bi = grad_input(n, 1);
      for (std::size_t r = 0; r < m.size(); ++r) {
        Node* dst = m[r] ? ai : bi;
        if (!dst) continue;
        for (std::size_t j = 0; j < row; ++j) dst->grad[r * row + j] += n.grad[r * row + j];
      }
    };
  }
  return out;
}

Tensor log_softmax(const Tensor& logits) {
  require_rank(logits, 2, "log_softmax");
  const int rows = logits.dim(0), cls = logits.dim(1);
  Tensor out = make_result(logits.shape(), {logits});
  for (int r = 0; r < rows; ++r) {
    const double* x = logits.data().data() + static_cast<std::size_t>(r) * cls;
    double* y = out.data().data() + static_cast<std::size_t>(r) * cls;
    const double mx = *std::max_element(x, x + cls);
    double z = 0.0;
    for (int c = 0; c < cls; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    for (int c = 0; c < cls; ++c) y[c] = x[c] - lse;
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [rows, cls](Node& n) {
      if (Node* in = grad_input(n, 0)) {
        for (int r = 0; r < rows; ++r) {
          const std::size_t o = static_cast<std::size_t>(r) * cls;
          double gs = 0.0;
          for (int c = 0; c < cls; ++c) gs += n.grad[o + c];
          for (int c = 0; c < cls; ++c) in->grad[o + c] += n.grad[o + c] - std::exp(n.value[o + c]) * gs;
        }
      }
    };
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index) {
  require_rank(logits, 2, "cross_entropy");
  const int rows = logits.dim(0), cls = logits.dim(1);
  if (static_cast<int>(targets.size()) != rows) throw std::invalid_argument("cross_entropy: target count");
  Tensor lp = log_softmax(logits);
  int counted = 0;
  for (int t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || t >= cls) throw std::out_of_range("cross_entropy: target class out of range");
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("cross_entropy: every target ignored");
  Tensor out = make_result({1}, {lp});
  double s = 0.0;
  for (int r = 0; r < rows; ++r)
    if (targets[static_cast<std::size_t>(r)] != ignore_index)
      s -= lp.data()[static_cast<std::size_t>(r) * cls + targets[static_cast<std::size_t>(r)]];
  out.data()[0] = s / counted;
  if (out.requires_grad()) {
    out.node()->backward_fn = [t = std::vector<int>(targets.begin(), targets.end()), cls, counted,
                               ignore_index](Node& n) {
      if (Node* in = grad_input(n, 0)) {
        for (std::size_t r = 0; r < t.size(); ++r)
          if (t[r] != ignore_index) in->grad[r * cls + static_cast<std::size_t>(t[r])] -= n.grad[0] / counted;
      }
    };
  }
  return out;
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
  if (logits.size() != targets.size()) throw std::invalid_argument("bce_with_logits: target count");
  if (targets.empty()) throw std::invalid_argument("bce_with_logits: empty batch");
  Tensor out = make_result({1}, {logits});
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double x = logits.data()[i];
    // log(1 + e^x) - t x, evaluated stably
    s += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  const double count = static_cast<double>(targets.size());
  out.data()[0] = s / count;
  if (out.requires_grad()) {
    out.node()->backward_fn = [t = std::vector<double>(targets.begin(), targets.end()), count](Node& n) {
      if (Node* in = grad_input(n, 0)) {
        for (std::size_t i = 0; i < t.size(); ++i) {
          const double x = in->value[i];
          const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
          in->grad[i] += n.grad[0] * (p - t[i]) / count;
        }
      }
    };
  }
  return out;
}

}  // namespace cigli::nn
