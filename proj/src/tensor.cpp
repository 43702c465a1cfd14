#include "dlif/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace dlif {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

const char* prim_name(Prim kind) {
  switch (kind) {
    case Prim::leaf: return "leaf";
    case Prim::conv2d: return "conv2d";
    case Prim::linear: return "linear";
    case Prim::relu: return "relu";
    case Prim::sigmoid: return "sigmoid";
    case Prim::softmax: return "softmax";
    case Prim::l2_normalize: return "l2_normalize";
    case Prim::channel_mean: return "channel_mean";
    case Prim::channel_std: return "channel_std";
    case Prim::global_avg_pool: return "global_avg_pool";
    case Prim::concat: return "concat";
    case Prim::add: return "add";
    case Prim::mul: return "mul";
    case Prim::scale: return "scale";
    case Prim::matmul: return "matmul";
    case Prim::transpose: return "transpose";
    case Prim::sum: return "sum";
    case Prim::mean: return "mean";
    case Prim::square: return "square";
    case Prim::log: return "log";
    case Prim::exp: return "exp";
    case Prim::slice: return "slice";
    case Prim::broadcast_channel: return "broadcast_channel";
  }
  return "?";
}

double TensorNode::scalar() const {
  if (size() != 1) {
    throw std::invalid_argument("scalar(): tensor has shape " + shape_str(shape));
  }
  return data[0];
}

void TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
}

void TensorNode::zero_grad() {
  std::fill(grad.begin(), grad.end(), 0.0);
}

Tensor make_tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("make_tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(data.size()) + " values");
  }
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("make_tensor: non-positive dim in " + shape_str(shape));
  }
  auto t = std::make_shared<TensorNode>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  return t;
}

Tensor zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor full(Shape shape, double value, bool requires_grad) {
  std::vector<double> d(static_cast<size_t>(numel(shape)), value);
  return make_tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor detach(const Tensor& t) {
  return make_tensor(t->shape, t->data, false);
}

int64_t flat_index(const Shape& shape, const std::vector<int>& idx) {
  int64_t off = 0;
  for (size_t i = 0; i < shape.size(); ++i) off = off * shape[i] + idx[i];
  return off;
}

namespace {

[[noreturn]] void shape_error(Prim kind, const std::string& msg) {
  throw std::invalid_argument(std::string(prim_name(kind)) + ": " + msg);
}

void check_finite(Prim kind, const std::vector<Tensor>& inputs) {
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (double v : inputs[i]->data) {
      if (!std::isfinite(v)) {
        throw std::domain_error(std::string(prim_name(kind)) + ": non-finite value in input " +
                                std::to_string(i));
      }
    }
  }
}

void require_inputs(Prim kind, const std::vector<Tensor>& inputs, size_t lo, size_t hi) {
  if (inputs.size() < lo || inputs.size() > hi) {
    shape_error(kind, "expected " + std::to_string(lo) + (hi != lo ? ".." + std::to_string(hi) : "") +
                          " inputs, got " + std::to_string(inputs.size()));
  }
}

struct ConvDims {
  int n, ci, h, w, co, kh, kw, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& k, const Attrs& a) {
  if (x->rank() != 4) shape_error(Prim::conv2d, "input must be NCHW, got " + shape_str(x->shape));
  if (k->rank() != 4) shape_error(Prim::conv2d, "kernel must be OIHW, got " + shape_str(k->shape));
  ConvDims d{};
  d.n = x->dim(0);
  d.ci = x->dim(1);
  d.h = x->dim(2);
  d.w = x->dim(3);
  d.co = k->dim(0);
  d.kh = k->dim(2);
  d.kw = k->dim(3);
  if (k->dim(1) != d.ci) {
    shape_error(Prim::conv2d, "kernel in-channels " + std::to_string(k->dim(1)) +
                                  " != input channels " + std::to_string(d.ci));
  }
  d.oh = (d.h + 2 * a.pad - d.kh) / a.stride + 1;
  d.ow = (d.w + 2 * a.pad - d.kw) / a.stride + 1;
  if (d.oh <= 0 || d.ow <= 0) {
    shape_error(Prim::conv2d, "kernel " + shape_str(k->shape) + " too large for input " +
                                  shape_str(x->shape) + " at pad " + std::to_string(a.pad));
  }
  return d;
}

// ---- conv2d kernels (im2col + small row-major GEMMs) ----

// col has Ci*kh*kw rows and oh*ow columns.
void im2col(const double* x, const ConvDims& d, int stride, int pad, double* col) {
  const int n_cols = d.oh * d.ow;
  for (int ci = 0; ci < d.ci; ++ci) {
    const double* xc = x + static_cast<int64_t>(ci) * d.h * d.w;
    for (int u = 0; u < d.kh; ++u) {
      for (int v = 0; v < d.kw; ++v) {
        double* row = col + (static_cast<int64_t>(ci) * d.kh * d.kw + u * d.kw + v) * n_cols;
        for (int oh = 0; oh < d.oh; ++oh) {
          const int ih = oh * stride + u - pad;
          double* out = row + static_cast<int64_t>(oh) * d.ow;
          if (ih < 0 || ih >= d.h) {
            std::fill(out, out + d.ow, 0.0);
            continue;
          }
          int lo = 0;
          while (lo < d.ow && lo * stride + v - pad < 0) ++lo;
          int hi = d.ow;
          while (hi > lo && (hi - 1) * stride + v - pad >= d.w) --hi;
          for (int ow = 0; ow < lo; ++ow) out[ow] = 0.0;
          const double* src = xc + static_cast<int64_t>(ih) * d.w + (v - pad);
          if (stride == 1) {
            for (int ow = lo; ow < hi; ++ow) out[ow] = src[ow];
          } else {
            for (int ow = lo; ow < hi; ++ow) out[ow] = src[ow * stride];
          }
          for (int ow = hi; ow < d.ow; ++ow) out[ow] = 0.0;
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvDims& d, int stride, int pad, double* dx) {
  const int n_cols = d.oh * d.ow;
  for (int ci = 0; ci < d.ci; ++ci) {
    double* xc = dx + static_cast<int64_t>(ci) * d.h * d.w;
    for (int u = 0; u < d.kh; ++u) {
      for (int v = 0; v < d.kw; ++v) {
        const double* row = col + (static_cast<int64_t>(ci) * d.kh * d.kw + u * d.kw + v) * n_cols;
        for (int oh = 0; oh < d.oh; ++oh) {
          const int ih = oh * stride + u - pad;
          if (ih < 0 || ih >= d.h) continue;
          int lo = 0;
          while (lo < d.ow && lo * stride + v - pad < 0) ++lo;
          int hi = d.ow;
          while (hi > lo && (hi - 1) * stride + v - pad >= d.w) --hi;
          const double* src = row + static_cast<int64_t>(oh) * d.ow;
          double* dst = xc + static_cast<int64_t>(ih) * d.w + (v - pad);
          if (stride == 1) {
            for (int ow = lo; ow < hi; ++ow) dst[ow] += src[ow];
          } else {
            for (int ow = lo; ow < hi; ++ow) dst[ow * stride] += src[ow];
          }
        }
      }
    }
  }
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* cr = c + static_cast<int64_t>(i) * n;
    const double* ar = a + static_cast<int64_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double av = ar[kk];
      const double* br = b + static_cast<int64_t>(kk) * n;
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T  (rows dot rows)
void gemm_abt_acc(const double* a, const double* b, double* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* ar = a + static_cast<int64_t>(i) * n;
    double* cr = c + static_cast<int64_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double* br = b + static_cast<int64_t>(kk) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += ar[j] * br[j];
      cr[kk] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_atb_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ar = a + static_cast<int64_t>(i) * k;
    const double* br = b + static_cast<int64_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double av = ar[kk];
      double* cr = c + static_cast<int64_t>(kk) * n;
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

Shape forward_shape(Prim kind, const std::vector<Tensor>& in, const Attrs& a) {
  switch (kind) {
    case Prim::conv2d: {
      require_inputs(kind, in, 2, 3);
      ConvDims d = conv_dims(in[0], in[1], a);
      if (in.size() == 3 && (in[2]->rank() != 1 || in[2]->dim(0) != d.co)) {
        shape_error(kind, "bias must be [" + std::to_string(d.co) + "], got " + shape_str(in[2]->shape));
      }
      return {d.n, d.co, d.oh, d.ow};
    }
    case Prim::linear: {
      require_inputs(kind, in, 2, 3);
      if (in[0]->rank() != 2 || in[1]->rank() != 2 || in[0]->dim(1) != in[1]->dim(1)) {
        shape_error(kind, "x " + shape_str(in[0]->shape) + " incompatible with w " + shape_str(in[1]->shape));
      }
      if (in.size() == 3 && (in[2]->rank() != 1 || in[2]->dim(0) != in[1]->dim(0))) {
        shape_error(kind, "bias must be [" + std::to_string(in[1]->dim(0)) + "], got " + shape_str(in[2]->shape));
      }
      return {in[0]->dim(0), in[1]->dim(0)};
    }
    case Prim::relu:
    case Prim::sigmoid:
    case Prim::square:
    case Prim::log:
    case Prim::exp:
    case Prim::scale: {
      require_inputs(kind, in, 1, 1);
      return in[0]->shape;
    }
    case Prim::softmax: {
      require_inputs(kind, in, 1, 1);
      if (in[0]->rank() != 2) shape_error(kind, "expects a 2-D row matrix, got " + shape_str(in[0]->shape));
      return in[0]->shape;
    }
    case Prim::l2_normalize: {
      require_inputs(kind, in, 1, 1);
      int r = in[0]->rank();
      if (!((r == 1 && a.axis == 0) || (r == 2 && a.axis == 1))) {
        shape_error(kind, "axis " + std::to_string(a.axis) + " invalid for " + shape_str(in[0]->shape));
      }
      return in[0]->shape;
    }
    case Prim::channel_mean:
    case Prim::channel_std:
    case Prim::global_avg_pool: {
      require_inputs(kind, in, 1, 1);
      if (in[0]->rank() != 4) shape_error(kind, "expects NCHW, got " + shape_str(in[0]->shape));
      return {in[0]->dim(0), in[0]->dim(1)};
    }
    case Prim::concat: {
      if (in.empty()) shape_error(kind, "needs at least one input");
      int r = in[0]->rank();
      if (r != 2 || (a.axis != 0 && a.axis != 1)) {
        shape_error(kind, "supports 2-D tensors along axis 0 or 1");
      }
      int other = a.axis == 0 ? 1 : 0;
      int total = 0;
      for (const auto& t : in) {
        if (t->rank() != 2 || t->dim(other) != in[0]->dim(other)) {
          shape_error(kind, "input " + shape_str(t->shape) + " mismatches " + shape_str(in[0]->shape) +
                                " along axis " + std::to_string(other));
        }
        total += t->dim(a.axis);
      }
      Shape s = in[0]->shape;
      s[a.axis] = total;
      return s;
    }
    case Prim::add:
    case Prim::mul: {
      require_inputs(kind, in, 2, 2);
      if (in[0]->shape != in[1]->shape) {
        shape_error(kind, shape_str(in[0]->shape) + " vs " + shape_str(in[1]->shape));
      }
      return in[0]->shape;
    }
    case Prim::matmul: {
      require_inputs(kind, in, 2, 2);
      if (in[0]->rank() != 2 || in[1]->rank() != 2 || in[0]->dim(1) != in[1]->dim(0)) {
        shape_error(kind, shape_str(in[0]->shape) + " x " + shape_str(in[1]->shape));
      }
      return {in[0]->dim(0), in[1]->dim(1)};
    }
    case Prim::transpose: {
      require_inputs(kind, in, 1, 1);
      if (in[0]->rank() != 2) shape_error(kind, "expects 2-D, got " + shape_str(in[0]->shape));
      return {in[0]->dim(1), in[0]->dim(0)};
    }
    case Prim::sum:
    case Prim::mean: {
      require_inputs(kind, in, 1, 1);
      return {1};
    }
    case Prim::slice: {
      require_inputs(kind, in, 1, 1);
      if (a.axis < 0 || a.axis >= in[0]->rank()) {
        shape_error(kind, "axis " + std::to_string(a.axis) + " out of range for " + shape_str(in[0]->shape));
      }
      if (a.start < 0 || a.stop <= a.start || a.stop > in[0]->dim(a.axis)) {
        shape_error(kind, "range [" + std::to_string(a.start) + "," + std::to_string(a.stop) +
                              ") invalid for dim " + std::to_string(in[0]->dim(a.axis)));
      }
      Shape s = in[0]->shape;
      s[a.axis] = a.stop - a.start;
      return s;
    }
    case Prim::broadcast_channel: {
      require_inputs(kind, in, 1, 1);
      if (in[0]->rank() != 2 || a.height <= 0 || a.width <= 0) {
        shape_error(kind, "expects [B,C] input and positive spatial dims, got " + shape_str(in[0]->shape));
      }
      return {in[0]->dim(0), in[0]->dim(1), a.height, a.width};
    }
    case Prim::leaf:
      shape_error(kind, "leaf is not applicable");
  }
  shape_error(kind, "unhandled kind");
}

void forward_eval(TensorNode& out) {
  const auto& in = out.parents;
  const Attrs& a = out.attrs;
  double* y = out.data.data();
  switch (out.op) {
    case Prim::conv2d: {
      ConvDims d = conv_dims(in[0], in[1], a);
      const double* x = in[0]->data.data();
      const double* w = in[1]->data.data();
      const double* b = in.size() == 3 ? in[2]->data.data() : nullptr;
      const int k_rows = d.ci * d.kh * d.kw;
      const int n_cols = d.oh * d.ow;
      std::vector<double> col(static_cast<size_t>(k_rows) * n_cols);
      for (int n = 0; n < d.n; ++n) {
        im2col(x + static_cast<int64_t>(n) * d.ci * d.h * d.w, d, a.stride, a.pad, col.data());
        double* yo = y + static_cast<int64_t>(n) * d.co * n_cols;
        for (int co = 0; co < d.co; ++co) {
          const double bias = b ? b[co] : 0.0;
          std::fill(yo + static_cast<int64_t>(co) * n_cols, yo + static_cast<int64_t>(co + 1) * n_cols,
                    bias);
        }
        gemm_acc(w, col.data(), yo, d.co, k_rows, n_cols);
      }
      break;
    }
    case Prim::linear: {
      const int bsz = in[0]->dim(0), ni = in[0]->dim(1), no = in[1]->dim(0);
      const double* x = in[0]->data.data();
      const double* w = in[1]->data.data();
      const double* b = in.size() == 3 ? in[2]->data.data() : nullptr;
      for (int i = 0; i < bsz; ++i) {
        for (int o = 0; o < no; ++o) {
          double acc = b ? b[o] : 0.0;
          const double* xr = x + static_cast<int64_t>(i) * ni;
          const double* wr = w + static_cast<int64_t>(o) * ni;
          for (int k = 0; k < ni; ++k) acc += xr[k] * wr[k];
          y[static_cast<int64_t>(i) * no + o] = acc;
        }
      }
      break;
    }
    case Prim::relu: {
      const auto& x = in[0]->data;
      for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    }
    case Prim::sigmoid: {
      const auto& x = in[0]->data;
      for (size_t i = 0; i < x.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
      break;
    }
    case Prim::softmax: {
      const int rows = in[0]->dim(0), cols = in[0]->dim(1);
      const double* x = in[0]->data.data();
      for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<int64_t>(r) * cols;
        double* yr = y + static_cast<int64_t>(r) * cols;
        double m = xr[0];
        for (int c = 1; c < cols; ++c) m = std::max(m, xr[c]);
        double z = 0.0;
        for (int c = 0; c < cols; ++c) {
          yr[c] = std::exp(xr[c] - m);
          z += yr[c];
        }
        for (int c = 0; c < cols; ++c) yr[c] /= z;
      }
      break;
    }
    case Prim::l2_normalize: {
      const int rows = in[0]->rank() == 1 ? 1 : in[0]->dim(0);
      const int cols = in[0]->rank() == 1 ? in[0]->dim(0) : in[0]->dim(1);
      const double* x = in[0]->data.data();
      for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<int64_t>(r) * cols;
        double* yr = y + static_cast<int64_t>(r) * cols;
        double n2 = 0.0;
        for (int c = 0; c < cols; ++c) n2 += xr[c] * xr[c];
        const double n = std::max(std::sqrt(n2), 1e-12);
        for (int c = 0; c < cols; ++c) yr[c] = xr[c] / n;
      }
      break;
    }
    case Prim::channel_mean:
    case Prim::global_avg_pool: {
      const int n = in[0]->dim(0), c = in[0]->dim(1), hw = in[0]->dim(2) * in[0]->dim(3);
      const double* x = in[0]->data.data();
      for (int i = 0; i < n * c; ++i) {
        const double* xc = x + static_cast<int64_t>(i) * hw;
        double acc = 0.0;
        for (int j = 0; j < hw; ++j) acc += xc[j];
        y[i] = acc / hw;
      }
      break;
    }
    case Prim::channel_std: {
      const int n = in[0]->dim(0), c = in[0]->dim(1), hw = in[0]->dim(2) * in[0]->dim(3);
      const double* x = in[0]->data.data();
      for (int i = 0; i < n * c; ++i) {
        const double* xc = x + static_cast<int64_t>(i) * hw;
        double mu = 0.0;
        for (int j = 0; j < hw; ++j) mu += xc[j];
        mu /= hw;
        double var = 0.0;
        for (int j = 0; j < hw; ++j) {
          const double dv = xc[j] - mu;
          var += dv * dv;
        }
        y[i] = std::sqrt(var / hw + a.eps);
      }
      break;
    }
    case Prim::concat: {
      if (a.axis == 0) {
        double* dst = y;
        for (const auto& t : in) {
          std::copy(t->data.begin(), t->data.end(), dst);
          dst += t->data.size();
        }
      } else {
        const int rows = in[0]->dim(0);
        const int total = out.dim(1);
        int off = 0;
        for (const auto& t : in) {
          const int cols = t->dim(1);
          for (int r = 0; r < rows; ++r) {
            std::copy(t->data.begin() + static_cast<int64_t>(r) * cols,
                      t->data.begin() + static_cast<int64_t>(r + 1) * cols,
                      y + static_cast<int64_t>(r) * total + off);
          }
          off += cols;
        }
      }
      break;
    }
    case Prim::add: {
      const auto& p = in[0]->data;
      const auto& q = in[1]->data;
      for (size_t i = 0; i < p.size(); ++i) y[i] = p[i] + q[i];
      break;
    }
    case Prim::mul: {
      const auto& p = in[0]->data;
      const auto& q = in[1]->data;
      for (size_t i = 0; i < p.size(); ++i) y[i] = p[i] * q[i];
      break;
    }
    case Prim::scale: {
      const auto& x = in[0]->data;
      for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] * a.factor;
      break;
    }
    case Prim::matmul: {
      const int m = in[0]->dim(0), k = in[0]->dim(1), n = in[1]->dim(1);
      const double* A = in[0]->data.data();
      const double* B = in[1]->data.data();
      std::fill(out.data.begin(), out.data.end(), 0.0);
      for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
          const double av = A[static_cast<int64_t>(i) * k + kk];
          const double* br = B + static_cast<int64_t>(kk) * n;
          double* yr = y + static_cast<int64_t>(i) * n;
          for (int j = 0; j < n; ++j) yr[j] += av * br[j];
        }
      }
      break;
    }
    case Prim::transpose: {
      const int r = in[0]->dim(0), c = in[0]->dim(1);
      const double* x = in[0]->data.data();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) y[static_cast<int64_t>(j) * r + i] = x[static_cast<int64_t>(i) * c + j];
      break;
    }
    case Prim::sum: {
      double acc = 0.0;
      for (double v : in[0]->data) acc += v;
      y[0] = acc;
      break;
    }
    case Prim::mean: {
      double acc = 0.0;
      for (double v : in[0]->data) acc += v;
      y[0] = acc / static_cast<double>(in[0]->data.size());
      break;
    }
    case Prim::square: {
      const auto& x = in[0]->data;
      for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] * x[i];
      break;
    }
    case Prim::log: {
      const auto& x = in[0]->data;
      for (size_t i = 0; i < x.size(); ++i) {
        if (x[i] <= 0.0) throw std::domain_error("log: non-positive input value");
        y[i] = std::log(x[i]);
      }
      break;
    }
    case Prim::exp: {
      const auto& x = in[0]->data;
      for (size_t i = 0; i < x.size(); ++i) y[i] = std::exp(x[i]);
      break;
    }
    case Prim::slice: {
      const Shape& s = in[0]->shape;
      int64_t outer = 1, inner = 1;
      for (int i = 0; i < a.axis; ++i) outer *= s[i];
      for (int i = a.axis + 1; i < in[0]->rank(); ++i) inner *= s[i];
      const int64_t len = a.stop - a.start;
      const double* x = in[0]->data.data();
      for (int64_t o = 0; o < outer; ++o) {
        const double* src = x + (o * s[a.axis] + a.start) * inner;
        std::copy(src, src + len * inner, y + o * len * inner);
      }
      break;
    }
    case Prim::broadcast_channel: {
      const int bc = in[0]->dim(0) * in[0]->dim(1);
      const int hw = a.height * a.width;
      const double* x = in[0]->data.data();
      for (int i = 0; i < bc; ++i) {
        std::fill(y + static_cast<int64_t>(i) * hw, y + static_cast<int64_t>(i + 1) * hw, x[i]);
      }
      break;
    }
    case Prim::leaf:
      break;
  }
}

// Per-pass gradient buffers keyed by node; persistent .grad is only written at
// the end of the sweep so repeated backward calls accumulate cleanly.
struct BackwardCtx {
  std::unordered_map<TensorNode*, std::vector<double>> buf;

  std::vector<double>& of(const Tensor& t) {
    auto it = buf.find(t.get());
    if (it == buf.end()) {
      it = buf.emplace(t.get(), std::vector<double>(t->data.size(), 0.0)).first;
    }
    return it->second;
  }
  bool has(const Tensor& t) const { return buf.count(t.get()) != 0; }
};

void backward_eval(TensorNode& node, const std::vector<double>& g, BackwardCtx& ctx) {
  const auto& in = node.parents;
  const Attrs& a = node.attrs;
  auto wants = [](const Tensor& t) { return t->requires_grad; };
  switch (node.op) {
    case Prim::conv2d: {
      ConvDims d = conv_dims(in[0], in[1], a);
      const double* w = in[1]->data.data();
      const double* x = in[0]->data.data();
      const int k_rows = d.ci * d.kh * d.kw;
      const int n_cols = d.oh * d.ow;
      const bool want_x = wants(in[0]);
      const bool want_w = wants(in[1]);
      std::vector<double> col;
      if (want_x || want_w) col.resize(static_cast<size_t>(k_rows) * n_cols);
      double* dx = want_x ? ctx.of(in[0]).data() : nullptr;
      double* dw = want_w ? ctx.of(in[1]).data() : nullptr;
      for (int n = 0; n < d.n; ++n) {
        const double* gn = g.data() + static_cast<int64_t>(n) * d.co * n_cols;
        if (want_w) {
          im2col(x + static_cast<int64_t>(n) * d.ci * d.h * d.w, d, a.stride, a.pad, col.data());
          gemm_abt_acc(gn, col.data(), dw, d.co, n_cols, k_rows);
        }
        if (want_x) {
          std::fill(col.begin(), col.end(), 0.0);
          gemm_atb_acc(w, gn, col.data(), d.co, k_rows, n_cols);
          col2im_add(col.data(), d, a.stride, a.pad, dx + static_cast<int64_t>(n) * d.ci * d.h * d.w);
        }
      }
      if (in.size() == 3 && wants(in[2])) {
        auto& db = ctx.of(in[2]);
        for (int n = 0; n < d.n; ++n) {
          for (int co = 0; co < d.co; ++co) {
            const double* go = g.data() + (static_cast<int64_t>(n) * d.co + co) * n_cols;
            double acc = 0.0;
            for (int i = 0; i < n_cols; ++i) acc += go[i];
            db[co] += acc;
          }
        }
      }
      break;
    }
    case Prim::linear: {
      const int bsz = in[0]->dim(0), ni = in[0]->dim(1), no = in[1]->dim(0);
      const double* x = in[0]->data.data();
      const double* w = in[1]->data.data();
      if (wants(in[0])) {
        auto& dx = ctx.of(in[0]);
        for (int i = 0; i < bsz; ++i) {
          for (int o = 0; o < no; ++o) {
            const double gv = g[static_cast<int64_t>(i) * no + o];
            const double* wr = w + static_cast<int64_t>(o) * ni;
            double* dxr = dx.data() + static_cast<int64_t>(i) * ni;
            for (int k = 0; k < ni; ++k) dxr[k] += gv * wr[k];
          }
        }
      }
      if (wants(in[1])) {
        auto& dw = ctx.of(in[1]);
        for (int i = 0; i < bsz; ++i) {
          for (int o = 0; o < no; ++o) {
            const double gv = g[static_cast<int64_t>(i) * no + o];
            const double* xr = x + static_cast<int64_t>(i) * ni;
            double* dwr = dw.data() + static_cast<int64_t>(o) * ni;
            for (int k = 0; k < ni; ++k) dwr[k] += gv * xr[k];
          }
        }
      }
      if (in.size() == 3 && wants(in[2])) {
        auto& db = ctx.of(in[2]);
        for (int i = 0; i < bsz; ++i)
          for (int o = 0; o < no; ++o) db[o] += g[static_cast<int64_t>(i) * no + o];
      }
      break;
    }
    case Prim::relu: {
      if (!wants(in[0])) break;
      auto& dx = ctx.of(in[0]);
      const auto& x = in[0]->data;
      // subgradient 0 at the kink
      for (size_t i = 0; i < x.size(); ++i) dx[i] += x[i] > 0.0 ? g[i] : 0.0;
      break;
    }
    case Prim::sigmoid: {
      if (!wants(in[0])) break;
      auto& dx = ctx.of(in[0]);
      for (size_t i = 0; i < node.data.size(); ++i) dx[i] += g[i] * node.data[i] * (1.0 - node.data[i]);
      break;
    }
    case Prim::softmax: {
      if (!wants(in[0])) break;
      auto& dx = ctx.of(in[0]);
      const int rows = node.dim(0), cols = node.dim(1);
      for (int r = 0; r < rows; ++r) {
        const double* yr = node.data.data() + static_cast<int64_t>(r) * cols;
        const double* gr = g.data() + static_cast<int64_t>(r) * cols;
        double dot = 0.0;
        for (int c = 0; c < cols; ++c) dot += gr[c] * yr[c];
        double* dxr = dx.data() + static_cast<int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) dxr[c] += yr[c] * (gr[c] - dot);
      }
      break;
    }
    case Prim::l2_normalize: {
      if (!wants(in[0])) break;
      auto& dx = ctx.of(in[0]);
      const int rows = in[0]->rank() == 1 ? 1 : in[0]->dim(0);
      const int cols = in[0]->rank() == 1 ? in[0]->dim(0) : in[0]->dim(1);
      const double* x = in[0]->data.data();
      for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<int64_t>(r) * cols;
        const double* yr = node.data.data() + static_cast<int64_t>(r) * cols;
        const double* gr = g.data() + static_cast<int64_t>(r) * cols;
        double n2 = 0.0;
        for (int c = 0; c < cols; ++c) n2 += xr[c] * xr[c];
        const double n = std::max(std::sqrt(n2), 1e-12);
        double dot = 0.0;
        for (int c = 0; c < cols; ++c) dot += gr[c] * yr[c];
        double* dxr = dx.data() + static_cast<int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) dxr[c] += (gr[c] - yr[c] * dot) / n;
      }
      break;
    }
    case Prim::channel_mean:
    case Prim::global_avg_pool: {
      if (!wants(in[0])) break;
      auto& dx = ctx.of(in[0]);
      const int nc = node.dim(0) * node.dim(1);
      const int hw = in[0]->dim(2) * in[0]->dim(3);
      for (int i = 0; i < nc; ++i) {
        const double gv = g[i] / hw;
        double* dxc = dx.data() + static_cast<int64_t>(i) * hw;
        for (int j = 0; j < hw; ++j) dxc[j] += gv;
      }
      break;
    }
    case Prim::channel_std: {
      if (!wants(in[0])) break;
      auto& dx = ctx.of(in[0]);
      const int nc = node.dim(0) * node.dim(1);
      const int hw = in[0]->dim(2) * in[0]->dim(3);
      const double* x = in[0]->data.data();
      for (int i = 0; i < nc; ++i) {
        const double* xc = x + static_cast<int64_t>(i) * hw;
        double mu = 0.0;
        for (int j = 0; j < hw; ++j) mu += xc[j];
        mu /= hw;
        const double coef = g[i] / (hw * node.data[i]);
        double* dxc = dx.data() + static_cast<int64_t>(i) * hw;
        for (int j = 0; j < hw; ++j) dxc[j] += coef * (xc[j] - mu);
      }
      break;
    }
    case Prim::concat: {
      if (a.axis == 0) {
        int64_t off = 0;
        for (const auto& t : in) {
          if (wants(t)) {
            auto& dt = ctx.of(t);
            for (size_t i = 0; i < dt.size(); ++i) dt[i] += g[off + i];
          }
          off += t->size();
        }
      } else {
        const int rows = node.dim(0), total = node.dim(1);
        int off = 0;
        for (const auto& t : in) {
          const int cols = t->dim(1);
          if (wants(t)) {
            auto& dt = ctx.of(t);
            for (int r = 0; r < rows; ++r)
              for (int c = 0; c < cols; ++c)
                dt[static_cast<int64_t>(r) * cols + c] += g[static_cast<int64_t>(r) * total + off + c];
          }
          off += cols;
        }
      }
      break;
    }
    case Prim::add: {
      for (int k = 0; k < 2; ++k) {
        if (!wants(in[k])) continue;
        auto& d = ctx.of(in[k]);
        for (size_t i = 0; i < d.size(); ++i) d[i] += g[i];
      }
      break;
    }
    case Prim::mul: {
      for (int k = 0; k < 2; ++k) {
        if (!wants(in[k])) continue;
        auto& d = ctx.of(in[k]);
        const auto& other = in[1 - k]->data;
        for (size_t i = 0; i < d.size(); ++i) d[i] += g[i] * other[i];
      }
      break;
    }
    case Prim::scale: {
      if (!wants(in[0])) break;
      auto& dx = ctx.of(in[0]);
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * a.factor;
      break;
    }
    case Prim::matmul: {
      const int m = in[0]->dim(0), k = in[0]->dim(1), n = in[1]->dim(1);
      const double* A = in[0]->data.data();
      const double* B = in[1]->data.data();
      if (wants(in[0])) {
        auto& dA = ctx.of(in[0]);
        for (int i = 0; i < m; ++i) {
          for (int kk = 0; kk < k; ++kk) {
            const double* br = B + static_cast<int64_t>(kk) * n;
            const double* gr = g.data() + static_cast<int64_t>(i) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += gr[j] * br[j];
            dA[static_cast<int64_t>(i) * k + kk] += acc;
          }
        }
      }
      if (wants(in[1])) {
        auto& dB = ctx.of(in[1]);
        for (int i = 0; i < m; ++i) {
          const double* gr = g.data() + static_cast<int64_t>(i) * n;
          for (int kk = 0; kk < k; ++kk) {
            const double av = A[static_cast<int64_t>(i) * k + kk];
            double* dbr = dB.data() + static_cast<int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) dbr[j] += av * gr[j];
          }
        }
      }
      break;
    }
    case Prim::transpose: {
      if (!wants(in[0])) break;
      auto& dx = ctx.of(in[0]);
      const int r = in[0]->dim(0), c = in[0]->dim(1);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) dx[static_cast<int64_t>(i) * c + j] += g[static_cast<int64_t>(j) * r + i];
      break;
    }
    case Prim::sum: {
      if (!wants(in[0])) break;
      auto& dx = ctx.of(in[0]);
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += g[0];
      break;
    }
    case Prim::mean: {
      if (!wants(in[0])) break;
      auto& dx = ctx.of(in[0]);
      const double gv = g[0] / static_cast<double>(dx.size());
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += gv;
      break;
    }
    case Prim::square: {
      if (!wants(in[0])) break;
      auto& dx = ctx.of(in[0]);
      const auto& x = in[0]->data;
      for (size_t i = 0; i < x.size(); ++i) dx[i] += 2.0 * x[i] * g[i];
      break;
    }
    case Prim::log: {
      if (!wants(in[0])) break;
      auto& dx = ctx.of(in[0]);
      const auto& x = in[0]->data;
      for (size_t i = 0; i < x.size(); ++i) dx[i] += g[i] / x[i];
      break;
    }
    case Prim::exp: {
      if (!wants(in[0])) break;
      auto& dx = ctx.of(in[0]);
      for (size_t i = 0; i < node.data.size(); ++i) dx[i] += g[i] * node.data[i];
      break;
    }
    case Prim::slice: {
      if (!wants(in[0])) break;
      auto& dx = ctx.of(in[0]);
      const Shape& s = in[0]->shape;
      int64_t outer = 1, inner = 1;
      for (int i = 0; i < a.axis; ++i) outer *= s[i];
      for (int i = a.axis + 1; i < in[0]->rank(); ++i) inner *= s[i];
      const int64_t len = a.stop - a.start;
      for (int64_t o = 0; o < outer; ++o) {
        double* dst = dx.data() + (o * s[a.axis] + a.start) * inner;
        const double* src = g.data() + o * len * inner;
        for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
      break;
    }
    case Prim::broadcast_channel: {
      if (!wants(in[0])) break;
      auto& dx = ctx.of(in[0]);
      const int hw = a.height * a.width;
      for (size_t i = 0; i < dx.size(); ++i) {
        const double* gr = g.data() + static_cast<int64_t>(i) * hw;
        double acc = 0.0;
        for (int j = 0; j < hw; ++j) acc += gr[j];
        dx[i] += acc;
      }
      break;
    }
    case Prim::leaf:
      break;
  }
}

}  // namespace

Tensor apply_primitive(Prim kind, const std::vector<Tensor>& inputs, const Attrs& attrs) {
  if (kind == Prim::leaf) throw std::invalid_argument("apply_primitive: leaf is not applicable");
  check_finite(kind, inputs);
  Shape out_shape = forward_shape(kind, inputs, attrs);
  auto out = std::make_shared<TensorNode>();
  out->shape = std::move(out_shape);
  out->data.assign(static_cast<size_t>(numel(out->shape)), 0.0);
  out->op = kind;
  out->attrs = attrs;
  out->parents = inputs;
  for (const auto& p : inputs) out->requires_grad = out->requires_grad || p->requires_grad;
  forward_eval(*out);
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  Attrs a;
  a.stride = stride;
  a.pad = pad;
  std::vector<Tensor> in{x, w};
  if (bias) in.push_back(bias);
  return apply_primitive(Prim::conv2d, in, a);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  std::vector<Tensor> in{x, w};
  if (bias) in.push_back(bias);
  return apply_primitive(Prim::linear, in);
}

Tensor relu(const Tensor& x) { return apply_primitive(Prim::relu, {x}); }
Tensor sigmoid(const Tensor& x) { return apply_primitive(Prim::sigmoid, {x}); }
Tensor softmax_rows(const Tensor& x) { return apply_primitive(Prim::softmax, {x}); }

Tensor l2_normalize(const Tensor& x, int axis) {
  Attrs a;
  a.axis = axis;
  return apply_primitive(Prim::l2_normalize, {x}, a);
}

Tensor channel_mean(const Tensor& x) { return apply_primitive(Prim::channel_mean, {x}); }

Tensor channel_std(const Tensor& x, double eps) {
  Attrs a;
  a.eps = eps;
  return apply_primitive(Prim::channel_std, {x}, a);
}

Tensor global_avg_pool(const Tensor& x) { return apply_primitive(Prim::global_avg_pool, {x}); }

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  Attrs a;
  a.axis = axis;
  return apply_primitive(Prim::concat, xs, a);
}

Tensor add(const Tensor& a, const Tensor& b) { return apply_primitive(Prim::add, {a, b}); }
Tensor mul(const Tensor& a, const Tensor& b) { return apply_primitive(Prim::mul, {a, b}); }

Tensor scale(const Tensor& x, double factor) {
  Attrs a;
  a.factor = factor;
  return apply_primitive(Prim::scale, {x}, a);
}

Tensor matmul(const Tensor& a, const Tensor& b) { return apply_primitive(Prim::matmul, {a, b}); }
Tensor transpose(const Tensor& x) { return apply_primitive(Prim::transpose, {x}); }
Tensor sum(const Tensor& x) { return apply_primitive(Prim::sum, {x}); }
Tensor mean(const Tensor& x) { return apply_primitive(Prim::mean, {x}); }
Tensor square(const Tensor& x) { return apply_primitive(Prim::square, {x}); }
Tensor log(const Tensor& x) { return apply_primitive(Prim::log, {x}); }
Tensor exp(const Tensor& x) { return apply_primitive(Prim::exp, {x}); }

Tensor slice(const Tensor& x, int axis, int start, int stop) {
  Attrs a;
  a.axis = axis;
  a.start = start;
  a.stop = stop;
  return apply_primitive(Prim::slice, {x}, a);
}

Tensor broadcast_channel(const Tensor& x, int height, int width) {
  Attrs a;
  a.height = height;
  a.width = width;
  return apply_primitive(Prim::broadcast_channel, {x}, a);
}

void backward(const Tensor& loss) {
  if (loss->size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss->shape));
  }
  if (loss->op == Prim::leaf) {
    throw std::invalid_argument("backward: loss has no recorded provenance");
  }

  // Reverse DFS post-order gives a topological order (consumers first).
  std::vector<TensorNode*> order;
  std::unordered_map<TensorNode*, int> state;  // 0 unseen, 1 open, 2 done
  std::vector<std::pair<TensorNode*, size_t>> stack{{loss.get(), 0}};
  state[loss.get()] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && state[p] == 0) {
        state[p] = 1;
        stack.emplace_back(p, 0);
      }
    } else {
      state[node] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());

  BackwardCtx ctx;
  ctx.buf.emplace(loss.get(), std::vector<double>{1.0});
  for (TensorNode* node : order) {
    auto it = ctx.buf.find(node);
    if (it == ctx.buf.end()) continue;  // no gradient reached this node
    if (node->op != Prim::leaf) backward_eval(*node, it->second, ctx);
  }
  // Fold pass-local buffers into persistent grads.
  for (auto& [node, buf] : ctx.buf) {
    if (!node->requires_grad) continue;
    node->ensure_grad();
    for (size_t i = 0; i < buf.size(); ++i) node->grad[i] += buf[i];
  }
}

void zero_all_grads(const std::vector<Tensor>& params) {
  for (const auto& p : params) p->zero_grad();
}

}  // namespace dlif
