#include "danet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "danet/kernels.hpp"

namespace danet {

namespace {

using kernels::Trans;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

struct AxisView {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisView split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm(Trans::No, Trans::No, m, n, k, a.data(), b.data(), 0.0, out);
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result("matmul", {m, n}, std::move(out), {a, b},
                     [ai, bi, m, n, k](std::span<const double> g) {
                       if (auto ga = grad_accumulator(ai); !ga.empty())
                         kernels::gemm(Trans::No, Trans::Yes, m, k, n, g, bi->data, 1.0, ga);
                       if (auto gb = grad_accumulator(bi); !gb.empty())
                         kernels::gemm(Trans::Yes, Trans::No, k, n, m, ai->data, g, 1.0, gb);
                     });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k) {
    throw ShapeError("linear: input " + shape_str(x.shape()) +
                     " does not match weight " + shape_str(w.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{n}) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) +
                     " does not match weight " + shape_str(w.shape()));
  }
  std::vector<double> out(m * n);
  if (bias.defined()) {
    const auto bd = bias.data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy(bd.begin(), bd.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  kernels::gemm(Trans::No, Trans::No, m, n, k, x.data(), w.data(),
                bias.defined() ? 1.0 : 0.0, out);
  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result("linear", {m, n}, std::move(out), inputs,
                     [xi, wi, bi, m, n, k](std::span<const double> g) {
                       if (auto gx = grad_accumulator(xi); !gx.empty())
                         kernels::gemm(Trans::No, Trans::Yes, m, k, n, g, wi->data, 1.0, gx);
                       if (auto gw = grad_accumulator(wi); !gw.empty())
                         kernels::gemm(Trans::Yes, Trans::No, k, n, m, xi->data, g, 1.0, gw);
                       if (auto gb = grad_accumulator(bi); !gb.empty()) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result("add", a.shape(), std::move(out), {a, b},
                     [ai, bi](std::span<const double> g) {
                       for (const auto& t : {ai, bi}) {
                         auto gt = grad_accumulator(t);
                         for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result("sub", a.shape(), std::move(out), {a, b},
                     [ai, bi](std::span<const double> g) {
                       auto ga = grad_accumulator(ai);
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                       auto gb = grad_accumulator(bi);
                       for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto ad = a.data(), bd = b.data();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result("mul", a.shape(), std::move(out), {a, b},
                     [ai, bi](std::span<const double> g) {
                       if (auto ga = grad_accumulator(ai); !ga.empty())
                         for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bi->data[i];
                       if (auto gb = grad_accumulator(bi); !gb.empty())
                         for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * ai->data[i];
                     });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * factor;
  auto xi = x.impl();
  return make_result("scale", x.shape(), std::move(out), {x},
                     [xi, factor](std::span<const double> g) {
                       auto gx = grad_accumulator(xi);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * factor;
                     });
}

Tensor sum(const Tensor& x) {
  const auto xd = x.data();
  const double total = std::accumulate(xd.begin(), xd.end(), 0.0);
  auto xi = x.impl();
  return make_result("sum", {}, {total}, {x}, [xi](std::span<const double> g) {
    auto gx = grad_accumulator(xi);
    for (double& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  auto xi = x.impl();
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x},
                     [xi](std::span<const double> g) {
                       auto gx = grad_accumulator(xi);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                     });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  std::vector<bool> used(rank, false);
  if (axes.size() != rank) {
    throw ShapeError("permute: " + std::to_string(axes.size()) +
                     " axes for shape " + shape_str(x.shape()));
  }
  for (std::size_t a : axes) {
    if (a >= rank || used[a]) {
      throw ShapeError("permute: invalid axis order for shape " +
                       shape_str(x.shape()));
    }
    used[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.dim(axes[i]);
  const auto in_strides = strides_of(x.shape());
  // Source offset for every output position, walked with an odometer.
  std::vector<std::size_t> src(x.numel());
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t off = 0;
    for (std::size_t flat = 0; flat < src.size(); ++flat) {
      src[flat] = off;
      for (std::size_t d = rank; d-- > 0;) {
        const std::size_t stride = in_strides[axes[d]];
        if (++idx[d] < out_shape[d]) {
          off += stride;
          break;
        }
        off -= stride * (out_shape[d] - 1);
        idx[d] = 0;
      }
    }
  }
  std::vector<double> out(src.size());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[src[i]];
  auto xi = x.impl();
  return make_result("permute", std::move(out_shape), std::move(out), {x},
                     [xi, src = std::move(src)](std::span<const double> g) {
                       auto gx = grad_accumulator(xi);
                       for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += g[i];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const AxisView v0 = split_axis(first, axis, "concat");
  std::size_t total = 0;
  std::vector<std::size_t> lens;
  for (const Tensor& p : parts) {
    Shape a = p.shape(), b = first;
    if (a.size() != b.size()) {
      throw ShapeError("concat: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    a[axis] = b[axis] = 0;
    if (a != b) {
      throw ShapeError("concat: shapes " + shape_str(p.shape()) + " and " +
                       shape_str(first) + " differ off axis " + std::to_string(axis));
    }
    lens.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> out(shape_numel(out_shape));
  const std::size_t inner = v0.inner;
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto pd = parts[pi].data();
    const std::size_t chunk = lens[pi] * inner;
    for (std::size_t o = 0; o < v0.outer; ++o) {
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total * inner + offset * inner));
    }
    offset += lens[pi];
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const Tensor& p : parts) impls.push_back(p.impl());
  return make_result("concat", std::move(out_shape), std::move(out), parts,
                     [impls, lens, outer = v0.outer, inner, total](std::span<const double> g) {
                       std::size_t offset = 0;
                       for (std::size_t pi = 0; pi < impls.size(); ++pi) {
                         const std::size_t chunk = lens[pi] * inner;
                         if (auto gp = grad_accumulator(impls[pi]); !gp.empty()) {
                           for (std::size_t o = 0; o < outer; ++o) {
                             const double* src = g.data() + o * total * inner + offset * inner;
                             double* dst = gp.data() + o * chunk;
                             for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                           }
                         }
                         offset += lens[pi];
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t length) {
  const AxisView v = split_axis(x.shape(), axis, "slice");
  if (start + length > v.len) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") exceeds axis of " +
                     shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> out(shape_numel(out_shape));
  const auto xd = x.data();
  const std::size_t chunk = length * v.inner;
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>((o * v.len + start) * v.inner), chunk,
                out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
  }
  auto xi = x.impl();
  return make_result("slice", std::move(out_shape), std::move(out), {x},
                     [xi, v, start, chunk](std::span<const double> g) {
                       auto gx = grad_accumulator(xi);
                       for (std::size_t o = 0; o < v.outer; ++o) {
                         double* dst = gx.data() + (o * v.len + start) * v.inner;
                         const double* src = g.data() + o * chunk;
                         for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor expand(const Tensor& x, const Shape& shape) {
  if (shape.size() != x.rank()) {
    throw ShapeError("expand: rank mismatch " + shape_str(x.shape()) + " -> " +
                     shape_str(shape));
  }
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (x.dim(d) != shape[d] && x.dim(d) != 1) {
      throw ShapeError("expand: cannot expand " + shape_str(x.shape()) +
                       " to " + shape_str(shape));
    }
  }
  const std::size_t rank = shape.size();
  const auto in_strides = strides_of(x.shape());
  std::vector<std::size_t> step(rank);
  for (std::size_t d = 0; d < rank; ++d) step[d] = x.dim(d) == 1 ? 0 : in_strides[d];
  std::vector<std::size_t> src(shape_numel(shape));
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t off = 0;
    for (std::size_t flat = 0; flat < src.size(); ++flat) {
      src[flat] = off;
      for (std::size_t d = rank; d-- > 0;) {
        if (++idx[d] < shape[d]) {
          off += step[d];
          break;
        }
        off -= step[d] * (shape[d] - 1);
        idx[d] = 0;
      }
    }
  }
  std::vector<double> out(src.size());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[src[i]];
  auto xi = x.impl();
  return make_result("expand", shape, std::move(out), {x},
                     [xi, src = std::move(src)](std::span<const double> g) {
                       auto gx = grad_accumulator(xi);
                       for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += g[i];
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  if (x.rank() < 1) throw ShapeError("gather_rows: scalar input");
  const std::size_t rows = x.dim(0);
  const std::size_t width = rows == 0 ? 0 : x.numel() / rows;
  for (std::size_t i : index) {
    if (i >= rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(i) +
                              " out of range for " + shape_str(x.shape()));
    }
  }
  Shape out_shape = x.shape();
  out_shape[0] = index.size();
  std::vector<double> out(index.size() * width);
  const auto xd = x.data();
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < index.size(); ++r) {
    std::copy_n(xd.data() + index[r] * width, width, out.data() + r * width);
  }
  auto xi = x.impl();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result("gather_rows", std::move(out_shape), std::move(out), {x},
                     [xi, idx = std::move(idx), width](std::span<const double> g) {
                       auto gx = grad_accumulator(xi);
                       // Sequential so duplicate indices accumulate in a fixed order.
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         double* dst = gx.data() + idx[r] * width;
                         const double* src = g.data() + r * width;
                         for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
                       }
                     });
}

Tensor weighted_gather_rows(const Tensor& x, std::span<const std::size_t> index,
                            std::span<const double> weight, std::size_t taps) {
  require_rank(x, 2, "weighted_gather_rows");
  if (taps == 0 || index.size() % taps != 0 || weight.size() != index.size()) {
    throw ShapeError("weighted_gather_rows: index/weight sizes inconsistent with taps");
  }
  const std::size_t rows = x.dim(0), width = x.dim(1);
  for (std::size_t i : index) {
    if (i >= rows) {
      throw std::out_of_range("weighted_gather_rows: index " + std::to_string(i) +
                              " out of range for " + shape_str(x.shape()));
    }
  }
  const std::size_t m = index.size() / taps;
  std::vector<double> out(m * width, 0.0);
  const auto xd = x.data();
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < m; ++r) {
    double* dst = out.data() + r * width;
    for (std::size_t t = 0; t < taps; ++t) {
      const double w = weight[r * taps + t];
      const double* src = xd.data() + index[r * taps + t] * width;
      for (std::size_t c = 0; c < width; ++c) dst[c] += w * src[c];
    }
  }
  auto xi = x.impl();
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> wts(weight.begin(), weight.end());
  return make_result("weighted_gather_rows", {m, width}, std::move(out), {x},
                     [xi, idx = std::move(idx), wts = std::move(wts), width, taps](std::span<const double> g) {
                       auto gx = grad_accumulator(xi);
                       for (std::size_t e = 0; e < idx.size(); ++e) {
                         double* dst = gx.data() + idx[e] * width;
                         const double* gr = g.data() + (e / taps) * width;
                         for (std::size_t c = 0; c < width; ++c) dst[c] += wts[e] * gr[c];
                       }
                     });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisView v = split_axis(x.shape(), axis, "softmax");
  std::vector<double> out(x.numel());
  const auto xd = x.data();
#pragma omp parallel for schedule(static)
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      double mx = xd[base];
      for (std::size_t j = 1; j < v.len; ++j) mx = std::max(mx, xd[base + j * v.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < v.len; ++j) {
        const double e = std::exp(xd[base + j * v.inner] - mx);
        out[base + j * v.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < v.len; ++j) out[base + j * v.inner] /= z;
    }
  }
  auto xi = x.impl();
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result("softmax", x.shape(), std::move(out), {x},
                     [xi, y, v](std::span<const double> g) {
                       auto gx = grad_accumulator(xi);
                       const auto& yd = *y;
#pragma omp parallel for schedule(static)
                       for (std::size_t o = 0; o < v.outer; ++o) {
                         for (std::size_t in = 0; in < v.inner; ++in) {
                           const std::size_t base = o * v.len * v.inner + in;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < v.len; ++j) {
                             const std::size_t p = base + j * v.inner;
                             dot += g[p] * yd[p];
                           }
                           for (std::size_t j = 0; j < v.len; ++j) {
                             const std::size_t p = base + j * v.inner;
                             gx[p] += yd[p] * (g[p] - dot);
                           }
                         }
                       }
                     });
}

Tensor max_pool(const Tensor& x, std::size_t axis) {
  const AxisView v = split_axis(x.shape(), axis, "max_pool");
  if (v.len == 0) throw ShapeError("max_pool: empty axis in " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = 1;
  std::vector<double> out(v.outer * v.inner);
  std::vector<std::size_t> arg(out.size());
  const auto xd = x.data();
#pragma omp parallel for schedule(static)
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      std::size_t best = base;
      for (std::size_t j = 1; j < v.len; ++j) {
        const std::size_t p = base + j * v.inner;
        if (xd[p] > xd[best]) best = p;
      }
      out[o * v.inner + in] = xd[best];
      arg[o * v.inner + in] = best;
    }
  }
  auto xi = x.impl();
  return make_result("max_pool", std::move(out_shape), std::move(out), {x},
                     [xi, arg = std::move(arg)](std::span<const double> g) {
                       auto gx = grad_accumulator(xi);
                       for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += g[i];
                     });
}

Tensor avg_pool(const Tensor& x, std::size_t axis) {
  const AxisView v = split_axis(x.shape(), axis, "avg_pool");
  if (v.len == 0) throw ShapeError("avg_pool: empty axis in " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = 1;
  std::vector<double> out(v.outer * v.inner, 0.0);
  const auto xd = x.data();
  const double inv = 1.0 / static_cast<double>(v.len);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      double s = 0.0;
      for (std::size_t j = 0; j < v.len; ++j) s += xd[base + j * v.inner];
      out[o * v.inner + in] = s * inv;
    }
  }
  auto xi = x.impl();
  return make_result("avg_pool", std::move(out_shape), std::move(out), {x},
                     [xi, v, inv](std::span<const double> g) {
                       auto gx = grad_accumulator(xi);
                       for (std::size_t o = 0; o < v.outer; ++o)
                         for (std::size_t j = 0; j < v.len; ++j)
                           for (std::size_t in = 0; in < v.inner; ++in)
                             gx[(o * v.len + j) * v.inner + in] += g[o * v.inner + in] * inv;
                     });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : slope * xd[i];
  auto xi = x.impl();
  return make_result("leaky_relu", x.shape(), std::move(out), {x},
                     [xi, slope](std::span<const double> g) {
                       auto gx = grad_accumulator(xi);
                       const auto& xd = xi->data;
                       for (std::size_t i = 0; i < gx.size(); ++i)
                         gx[i] += xd[i] > 0.0 ? g[i] : slope * g[i];
                     });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  const BatchNormConfig& config) {
  require_rank(x, 2, "batch_norm");
  const std::size_t m = x.dim(0), c = x.dim(1);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var}) {
    if (t->shape() != Shape{c}) {
      throw ShapeError("batch_norm: parameter shape " + shape_str(t->shape()) +
                       " does not match input " + shape_str(x.shape()));
    }
  }
  if (m == 0) throw ShapeError("batch_norm: empty batch");
  const auto xd = x.data();
  std::vector<double> mu(c, 0.0), var(c, 0.0);
  if (training) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) mu[j] += xd[i * c + j];
    for (double& v : mu) v /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double d = xd[i * c + j] - mu[j];
        var[j] += d * d;
      }
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (std::size_t j = 0; j < c; ++j) {
      const double unbiased = m > 1 ? var[j] / static_cast<double>(m - 1) : var[j];
      var[j] /= static_cast<double>(m);
      rm[j] = (1.0 - config.momentum) * rm[j] + config.momentum * mu[j];
      rv[j] = (1.0 - config.momentum) * rv[j] + config.momentum * unbiased;
    }
  } else {
    std::copy(running_mean.data().begin(), running_mean.data().end(), mu.begin());
    std::copy(running_var.data().begin(), running_var.data().end(), var.begin());
  }
  std::vector<double> inv_std(c);
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + config.eps);

  auto xhat = std::make_shared<std::vector<double>>(m * c);
  std::vector<double> out(m * c);
  const auto gd = gamma.data(), bd = beta.data();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xd[i * c + j] - mu[j]) * inv_std[j];
      (*xhat)[i * c + j] = h;
      out[i * c + j] = gd[j] * h + bd[j];
    }
  }
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return make_result(
      "batch_norm", {m, c}, std::move(out), {x, gamma, beta},
      [xi, gi, bi, xhat, inv_std, m, c, training](std::span<const double> g) {
        const auto& h = *xhat;
        std::vector<double> sum_g(c, 0.0), sum_gh(c, 0.0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            sum_g[j] += g[i * c + j];
            sum_gh[j] += g[i * c + j] * h[i * c + j];
          }
        if (auto gg = grad_accumulator(gi); !gg.empty())
          for (std::size_t j = 0; j < c; ++j) gg[j] += sum_gh[j];
        if (auto gb = grad_accumulator(bi); !gb.empty())
          for (std::size_t j = 0; j < c; ++j) gb[j] += sum_g[j];
        if (auto gx = grad_accumulator(xi); !gx.empty()) {
          const auto& gam = gi->data;
          const double inv_m = 1.0 / static_cast<double>(m);
#pragma omp parallel for schedule(static)
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
              const double k = gam[j] * inv_std[j];
              const std::size_t p = i * c + j;
              gx[p] += training ? k * (g[p] - inv_m * sum_g[j] - h[p] * inv_m * sum_gh[j])
                                : k * g[p];
            }
          }
        }
      });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double factor = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& v : mask) v = keep(rng) ? factor : 0.0;
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  auto xi = x.impl();
  return make_result("dropout", x.shape(), std::move(out), {x},
                     [xi, mask = std::move(mask)](std::span<const double> g) {
                       auto gx = grad_accumulator(xi);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * mask[i];
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t m = logits.dim(0), c = logits.dim(1);
  if (labels.size() != m) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for logits " + shape_str(logits.shape()));
  }
  if (m == 0) throw ShapeError("cross_entropy: empty batch");
  const auto ld = logits.data();
  auto prob = std::make_shared<std::vector<double>>(m * c);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) +
                              " outside [0, " + std::to_string(c) + ")");
    }
    const double* row = ld.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) (*prob)[i * c + j] = std::exp(row[j] - lse);
    total += lse - row[labels[i]];
  }
  auto li = logits.impl();
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result("cross_entropy", {}, {total / static_cast<double>(m)}, {logits},
                     [li, prob, lab = std::move(lab), m, c](std::span<const double> g) {
                       auto gl = grad_accumulator(li);
                       const double s = g[0] / static_cast<double>(m);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < c; ++j) {
                           const double target = static_cast<int>(j) == lab[i] ? 1.0 : 0.0;
                           gl[i * c + j] += s * ((*prob)[i * c + j] - target);
                         }
                     });
}

}  // namespace danet
