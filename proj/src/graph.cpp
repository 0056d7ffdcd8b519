#include "raingen/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace raingen::ad {

#ifdef __GLIBC__
// Tape buffers are allocated and freed every iteration; keeping large
// chunks on the heap free list instead of mmap/munmap cycles avoids a page
// fault per touched page per iteration.
[[maybe_unused]] static const bool tuned_malloc = [] {
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  return true;
}();
#endif

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kAbs: return "abs";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kPow: return "pow";
    case Op::kMatmul: return "matmul";
    case Op::kMatmulBt: return "matmul_bt";
    case Op::kConv2d: return "conv2d";
    case Op::kConvT2d: return "conv2d_transpose";
    case Op::kRelu: return "relu";
    case Op::kLeakyRelu: return "leaky_relu";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftmax: return "softmax";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kL2Normalize: return "l2_normalize";
    case Op::kInstanceNorm: return "instance_norm";
    case Op::kReshape: return "reshape";
    case Op::kGather: return "gather";
    case Op::kConcat: return "concat";
    case Op::kDetach: return "detach";
    case Op::kClamp: return "clamp";
    case Op::kMaximum: return "maximum";
    case Op::kMinimum: return "minimum";
  }
  return "?";
}

std::vector<std::string> op_catalog() {
  static const Op all[] = {
      Op::kAdd,       Op::kSub,      Op::kMul,          Op::kDiv,
      Op::kNeg,       Op::kAbs,      Op::kExp,          Op::kLog,
      Op::kPow,       Op::kMatmul,   Op::kMatmulBt,     Op::kConv2d,
      Op::kConvT2d,   Op::kRelu,     Op::kLeakyRelu,    Op::kTanh,
      Op::kSigmoid,   Op::kSoftmax,  Op::kSum,          Op::kMean,
      Op::kL2Normalize, Op::kInstanceNorm, Op::kReshape, Op::kGather,
      Op::kConcat,    Op::kDetach,   Op::kClamp,        Op::kMaximum,
      Op::kMinimum,
  };
  std::vector<std::string> names;
  for (Op op : all) names.emplace_back(op_name(op));
  return names;
}

const Tensor& Var::tensor() const {
  RG_CHECK(valid(), "use of an unbound Var");
  return graph_->tensor(id_);
}

namespace {

// [outer, n, inner] view of a shape around `axis`.
struct AxisView {
  int64_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& s, int axis) {
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<size_t>(i)];
  v.n = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

Shape drop_axis(const Shape& s, int axis) {
  Shape out;
  for (size_t i = 0; i < s.size(); ++i)
    if (static_cast<int>(i) != axis) out.push_back(s[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

std::vector<double>& ensure(std::vector<double>& v, size_t n) {
  if (v.empty()) v.assign(n, 0.0);
  return v;
}

struct ConvDims {
  int n, ci, h, w, co, kh, kw, ho, wo, stride, pad;
};

// Convolutions run as im2col + matmul so the inner loops stay long and
// contiguous even on small spatial grids. col is [Ci*kh*kw, Ho*Wo].
void im2col(const double* x, int ci, int h, int w, int kh, int kw, int s, int p,
            int ho, int wo, double* col) {
  const int64_t plane = static_cast<int64_t>(ho) * wo;
  for (int cc = 0; cc < ci; ++cc) {
    const double* xc = x + static_cast<int64_t>(cc) * h * w;
    for (int r = 0; r < kh; ++r) {
      for (int c = 0; c < kw; ++c) {
        double* dst = col + (static_cast<int64_t>(cc * kh + r) * kw + c) * plane;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * s + r - p;
          double* drow = dst + static_cast<int64_t>(oh) * wo;
          if (ih < 0 || ih >= h) {
            std::fill(drow, drow + wo, 0.0);
            continue;
          }
          const double* xrow = xc + static_cast<int64_t>(ih) * w;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * s + c - p;
            drow[ow] = (iw >= 0 && iw < w) ? xrow[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_acc(const double* col, int ci, int h, int w, int kh, int kw, int s, int p,
                int ho, int wo, double* x) {
  const int64_t plane = static_cast<int64_t>(ho) * wo;
  for (int cc = 0; cc < ci; ++cc) {
    double* xc = x + static_cast<int64_t>(cc) * h * w;
    for (int r = 0; r < kh; ++r) {
      for (int c = 0; c < kw; ++c) {
        const double* src = col + (static_cast<int64_t>(cc * kh + r) * kw + c) * plane;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * s + r - p;
          if (ih < 0 || ih >= h) continue;
          double* xrow = xc + static_cast<int64_t>(ih) * w;
          const double* srow = src + static_cast<int64_t>(oh) * wo;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * s + c - p;
            if (iw >= 0 && iw < w) xrow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

// The matmul kernels below use fixed tiling and unrolled accumulation
// orders: without fast-math a single FP dependency chain runs
// latency-bound, and re-streaming the whole K dimension per output row
// thrashes L2. The chosen orders are fixed, so results stay
// bit-reproducible run to run.

constexpr int kRowTile = 64;

// C[M,N] += A[M,K] * B[K,N]
void mm_nn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int k0 = 0; k0 < k; k0 += kRowTile) {
    const int k1 = std::min(k, k0 + kRowTile);
    for (int i = 0; i < m; ++i) {
      const double* arow = a + static_cast<int64_t>(i) * k;
      double* crow = c + static_cast<int64_t>(i) * n;
      int kk = k0;
      for (; kk + 4 <= k1; kk += 4) {
        const double a0 = arow[kk], a1 = arow[kk + 1], a2 = arow[kk + 2],
                     a3 = arow[kk + 3];
        const double* b0 = b + static_cast<int64_t>(kk) * n;
        const double* b1 = b0 + n;
        const double* b2 = b1 + n;
        const double* b3 = b2 + n;
        for (int j = 0; j < n; ++j)
          crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
      }
      for (; kk < k1; ++kk) {
        const double av = arow[kk];
        const double* brow = b + static_cast<int64_t>(kk) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T
void mm_nt_acc(const double* a, const double* b, double* c, int m, int n, int k) {
  for (int k0 = 0; k0 < k; k0 += kRowTile) {
    const int k1 = std::min(k, k0 + kRowTile);
    for (int i = 0; i < m; ++i) {
      const double* arow = a + static_cast<int64_t>(i) * n;
      double* crow = c + static_cast<int64_t>(i) * k;
      for (int kk = k0; kk < k1; ++kk) {
        const double* brow = b + static_cast<int64_t>(kk) * n;
        double s[16] = {0.0};
        int j = 0;
        for (; j + 16 <= n; j += 16)
          for (int u = 0; u < 16; ++u) s[u] += arow[j + u] * brow[j + u];
        for (; j < n; ++j) s[0] += arow[j] * brow[j];
        double acc = 0.0;
        for (int u = 0; u < 16; ++u) acc += s[u];
        crow[kk] += acc;
      }
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int k0 = 0; k0 < k; k0 += kRowTile) {
    const int k1 = std::min(k, k0 + kRowTile);
    int i = 0;
    for (; i + 4 <= m; i += 4) {
      const double* a0 = a + static_cast<int64_t>(i) * k;
      const double* a1 = a0 + k;
      const double* a2 = a1 + k;
      const double* a3 = a2 + k;
      const double* b0 = b + static_cast<int64_t>(i) * n;
      const double* b1 = b0 + n;
      const double* b2 = b1 + n;
      const double* b3 = b2 + n;
      for (int kk = k0; kk < k1; ++kk) {
        const double w0 = a0[kk], w1 = a1[kk], w2 = a2[kk], w3 = a3[kk];
        double* crow = c + static_cast<int64_t>(kk) * n;
        for (int j = 0; j < n; ++j)
          crow[j] += w0 * b0[j] + w1 * b1[j] + w2 * b2[j] + w3 * b3[j];
      }
    }
    for (; i < m; ++i) {
      const double* arow = a + static_cast<int64_t>(i) * k;
      const double* brow = b + static_cast<int64_t>(i) * n;
      for (int kk = k0; kk < k1; ++kk) {
        const double av = arow[kk];
        double* crow = c + static_cast<int64_t>(kk) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

void conv2d_fwd(const double* x, const double* w, const double* b, double* y,
                const ConvDims& d) {
  const int k = d.ci * d.kh * d.kw;
  const int n = d.ho * d.wo;
  std::vector<double> col(static_cast<size_t>(k) * n);
  for (int nn = 0; nn < d.n; ++nn) {
    const double* xn = x + static_cast<int64_t>(nn) * d.ci * d.h * d.w;
    double* yn = y + static_cast<int64_t>(nn) * d.co * n;
    im2col(xn, d.ci, d.h, d.w, d.kh, d.kw, d.stride, d.pad, d.ho, d.wo, col.data());
    for (int co = 0; co < d.co; ++co)
      std::fill(yn + static_cast<int64_t>(co) * n, yn + static_cast<int64_t>(co + 1) * n,
                b ? b[co] : 0.0);
    mm_nn_acc(w, col.data(), yn, d.co, k, n);
  }
}

void conv2d_bwd(const double* x, const double* w, const double* g, double* dx,
                double* dw, double* db, const ConvDims& d) {
  const int k = d.ci * d.kh * d.kw;
  const int n = d.ho * d.wo;
  std::vector<double> col(static_cast<size_t>(k) * n);
  std::vector<double> dcol;
  for (int nn = 0; nn < d.n; ++nn) {
    const double* xn = x + static_cast<int64_t>(nn) * d.ci * d.h * d.w;
    const double* gn = g + static_cast<int64_t>(nn) * d.co * n;
    if (db) {
      for (int co = 0; co < d.co; ++co) {
        const double* grow = gn + static_cast<int64_t>(co) * n;
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += grow[j];
        db[co] += acc;
      }
    }
    if (dw) {
      im2col(xn, d.ci, d.h, d.w, d.kh, d.kw, d.stride, d.pad, d.ho, d.wo, col.data());
      mm_nt_acc(gn, col.data(), dw, d.co, n, k);
    }
    if (dx) {
      dcol.assign(static_cast<size_t>(k) * n, 0.0);
      mm_tn_acc(w, gn, dcol.data(), d.co, k, n);
      col2im_acc(dcol.data(), d.ci, d.h, d.w, d.kh, d.kw, d.stride, d.pad, d.ho, d.wo,
                 dx + static_cast<int64_t>(nn) * d.ci * d.h * d.w);
    }
  }
}

// Transposed conv == the input-gradient of a forward conv that maps the
// output grid back to the input grid; weights are [Ci, Co, kh, kw].
void convt2d_fwd(const double* x, const double* w, const double* b, double* y,
                 const ConvDims& d) {
  const int k = d.co * d.kh * d.kw;
  const int n = d.h * d.w;  // source grid
  const int64_t yplane = static_cast<int64_t>(d.ho) * d.wo;
  std::vector<double> col(static_cast<size_t>(k) * n);
  for (int nn = 0; nn < d.n; ++nn) {
    const double* xn = x + static_cast<int64_t>(nn) * d.ci * n;
    double* yn = y + static_cast<int64_t>(nn) * d.co * yplane;
    std::fill(col.begin(), col.end(), 0.0);
    mm_tn_acc(w, xn, col.data(), d.ci, k, n);
    for (int co = 0; co < d.co; ++co)
      std::fill(yn + co * yplane, yn + (co + 1) * yplane, b ? b[co] : 0.0);
    col2im_acc(col.data(), d.co, d.ho, d.wo, d.kh, d.kw, d.stride, d.pad, d.h, d.w, yn);
  }
}

void convt2d_bwd(const double* x, const double* w, const double* g, double* dx,
                 double* dw, double* db, const ConvDims& d) {
  const int k = d.co * d.kh * d.kw;
  const int n = d.h * d.w;
  const int64_t yplane = static_cast<int64_t>(d.ho) * d.wo;
  std::vector<double> col(static_cast<size_t>(k) * n);
  for (int nn = 0; nn < d.n; ++nn) {
    const double* xn = x + static_cast<int64_t>(nn) * d.ci * n;
    const double* gn = g + static_cast<int64_t>(nn) * d.co * yplane;
    if (db) {
      for (int co = 0; co < d.co; ++co) {
        const double* grow = gn + co * yplane;
        double acc = 0.0;
        for (int64_t j = 0; j < yplane; ++j) acc += grow[j];
        db[co] += acc;
      }
    }
    im2col(gn, d.co, d.ho, d.wo, d.kh, d.kw, d.stride, d.pad, d.h, d.w, col.data());
    if (dx)
      mm_nn_acc(w, col.data(), dx + static_cast<int64_t>(nn) * d.ci * n, d.ci, k, n);
    if (dw) mm_nt_acc(xn, col.data(), dw, d.ci, n, k);
  }
}

}  // namespace

int32_t Graph::push(Node n) {
  // a single |.|-sum absorbs any inf/nan, so one vectorizable pass checks
  // the whole tensor
  double probe = 0.0;
  for (double v : n.out.values) probe += std::abs(v);
  if (!std::isfinite(probe)) {
    throw Error(detail::format_msg("non-finite value in node #", nodes_.size(), " (",
                                   op_name(n.op), ")"));
  }
  nodes_.push_back(std::move(n));
  return static_cast<int32_t>(nodes_.size()) - 1;
}

void Graph::check_same_graph(Var v) const {
  RG_CHECK(v.valid() && v.graph() == this &&
               v.id() < static_cast<int32_t>(nodes_.size()),
           "tensor not in graph");
}

const Tensor& Graph::tensor(int32_t id) const { return nodes_[static_cast<size_t>(id)].out; }
Tensor& Graph::mutable_tensor(int32_t id) { return nodes_[static_cast<size_t>(id)].out; }

Var Graph::leaf(Tensor t) {
  Node n;
  n.op = Op::kLeaf;
  n.out = std::move(t);
  return Var(this, push(std::move(n)));
}

Var Graph::constant(double v) { return constant(Tensor::scalar_value(v)); }

Var Graph::constant(Tensor t) {
  t.requires_grad = false;
  return leaf(std::move(t));
}

Var Graph::binary(Op op, Var a, Var b) {
  check_same_graph(a);
  check_same_graph(b);
  const Tensor& ta = tensor(a.id());
  const Tensor& tb = tensor(b.id());
  int bcast;
  Shape out_shape;
  if (ta.shape == tb.shape) {
    bcast = 0;
    out_shape = ta.shape;
  } else if (ta.numel() == 1) {
    bcast = 1;
    out_shape = tb.shape;
  } else if (tb.numel() == 1) {
    bcast = 2;
    out_shape = ta.shape;
  } else if (ta.rank() == 2 && tb.rank() == 1 && ta.shape[1] == tb.shape[0]) {
    bcast = 3;
    out_shape = ta.shape;
  } else if (ta.rank() == 1 && tb.rank() == 2 && tb.shape[1] == ta.shape[0]) {
    bcast = 4;
    out_shape = tb.shape;
  } else {
    throw Error(detail::format_msg("shape mismatch in ", op_name(op), ": ",
                                   shape_str(ta.shape), " vs ", shape_str(tb.shape)));
  }

  const int64_t n = shape_numel(out_shape);
  const int64_t m = out_shape.empty() ? 1 : out_shape.back();
  std::vector<double> vals(static_cast<size_t>(n));
  auto ai = [&](int64_t i) -> int64_t {
    switch (bcast) {
      case 1: return 0;
      case 4: return i % m;
      default: return i;
    }
  };
  auto bi = [&](int64_t i) -> int64_t {
    switch (bcast) {
      case 2: return 0;
      case 3: return i % m;
      default: return i;
    }
  };
  for (int64_t i = 0; i < n; ++i) {
    const double x = ta.values[static_cast<size_t>(ai(i))];
    const double y = tb.values[static_cast<size_t>(bi(i))];
    double r = 0.0;
    switch (op) {
      case Op::kAdd: r = x + y; break;
      case Op::kSub: r = x - y; break;
      case Op::kMul: r = x * y; break;
      case Op::kDiv: r = x / y; break;
      case Op::kMaximum: r = x >= y ? x : y; break;
      case Op::kMinimum: r = x <= y ? x : y; break;
      default: RG_CHECK(false, "not a binary op");
    }
    vals[static_cast<size_t>(i)] = r;
  }
  Node node;
  node.op = op;
  node.inputs = {a.id(), b.id()};
  node.bcast = bcast;
  node.out = Tensor(std::move(out_shape), std::move(vals));
  return Var(this, push(std::move(node)));
}

Var Graph::add(Var a, Var b) { return binary(Op::kAdd, a, b); }
Var Graph::sub(Var a, Var b) { return binary(Op::kSub, a, b); }
Var Graph::mul(Var a, Var b) { return binary(Op::kMul, a, b); }
Var Graph::div(Var a, Var b) { return binary(Op::kDiv, a, b); }
Var Graph::maximum(Var a, Var b) { return binary(Op::kMaximum, a, b); }
Var Graph::minimum(Var a, Var b) { return binary(Op::kMinimum, a, b); }

Var Graph::unary(Op op, Var a, double a0, double a1) {
  check_same_graph(a);
  const Tensor& ta = tensor(a.id());
  std::vector<double> vals(ta.values.size());
  for (size_t i = 0; i < ta.values.size(); ++i) {
    const double x = ta.values[i];
    double r = 0.0;
    switch (op) {
      case Op::kNeg: r = -x; break;
      case Op::kAbs: r = std::abs(x); break;
      case Op::kExp: r = std::exp(x); break;
      case Op::kLog: r = std::log(x); break;
      case Op::kPow: r = std::pow(x, a0); break;
      case Op::kRelu: r = x > 0.0 ? x : 0.0; break;
      case Op::kLeakyRelu: r = x > 0.0 ? x : a0 * x; break;
      case Op::kTanh: r = std::tanh(x); break;
      case Op::kSigmoid: r = 1.0 / (1.0 + std::exp(-x)); break;
      case Op::kClamp: r = x < a0 ? a0 : (x > a1 ? a1 : x); break;
      case Op::kDetach: r = x; break;
      default: RG_CHECK(false, "not a unary op");
    }
    vals[i] = r;
  }
  Node node;
  node.op = op;
  node.inputs = {a.id()};
  node.a0 = a0;
  node.a1 = a1;
  node.out = Tensor(ta.shape, std::move(vals));
  return Var(this, push(std::move(node)));
}

Var Graph::neg(Var a) { return unary(Op::kNeg, a); }
Var Graph::abs(Var a) { return unary(Op::kAbs, a); }
Var Graph::exp(Var a) { return unary(Op::kExp, a); }
Var Graph::log(Var a) { return unary(Op::kLog, a); }
Var Graph::pow(Var a, double exponent) { return unary(Op::kPow, a, exponent); }
Var Graph::relu(Var a) { return unary(Op::kRelu, a); }
Var Graph::leaky_relu(Var a, double slope) { return unary(Op::kLeakyRelu, a, slope); }
Var Graph::tanh(Var a) { return unary(Op::kTanh, a); }
Var Graph::sigmoid(Var a) { return unary(Op::kSigmoid, a); }
Var Graph::detach(Var a) { return unary(Op::kDetach, a); }
Var Graph::clamp(Var a, double lo, double hi) { return unary(Op::kClamp, a, lo, hi); }

Var Graph::matmul(Var a, Var b) {
  check_same_graph(a);
  check_same_graph(b);
  const Tensor& ta = tensor(a.id());
  const Tensor& tb = tensor(b.id());
  RG_CHECK(ta.rank() == 2 && tb.rank() == 2 && ta.shape[1] == tb.shape[0],
           "shape mismatch in matmul: ", shape_str(ta.shape), " vs ", shape_str(tb.shape));
  const int64_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
  std::vector<double> c(static_cast<size_t>(m * n), 0.0);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = ta.values[static_cast<size_t>(i * k + kk)];
      const double* brow = tb.values.data() + kk * n;
      double* crow = c.data() + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  Node node;
  node.op = Op::kMatmul;
  node.inputs = {a.id(), b.id()};
  node.out = Tensor({m, n}, std::move(c));
  return Var(this, push(std::move(node)));
}

Var Graph::matmul_bt(Var a, Var b) {
  check_same_graph(a);
  check_same_graph(b);
  const Tensor& ta = tensor(a.id());
  const Tensor& tb = tensor(b.id());
  RG_CHECK(ta.rank() == 2 && tb.rank() == 2 && ta.shape[1] == tb.shape[1],
           "shape mismatch in matmul_bt: ", shape_str(ta.shape), " vs ", shape_str(tb.shape));
  const int64_t m = ta.shape[0], d = ta.shape[1], n = tb.shape[0];
  std::vector<double> c(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = ta.values.data() + i * d;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = tb.values.data() + j * d;
      double s[16] = {0.0};
      int64_t kk = 0;
      for (; kk + 16 <= d; kk += 16)
        for (int u = 0; u < 16; ++u) s[u] += arow[kk + u] * brow[kk + u];
      for (; kk < d; ++kk) s[0] += arow[kk] * brow[kk];
      double acc = 0.0;
      for (int u = 0; u < 16; ++u) acc += s[u];
      c[static_cast<size_t>(i * n + j)] = acc;
    }
  }
  Node node;
  node.op = Op::kMatmulBt;
  node.inputs = {a.id(), b.id()};
  node.out = Tensor({m, n}, std::move(c));
  return Var(this, push(std::move(node)));
}

namespace {
ConvDims make_conv_dims(const Tensor& x, const Tensor& w, bool transposed, int stride,
                        int pad) {
  RG_CHECK(x.rank() == 4, "conv input must be rank 4, got ", shape_str(x.shape));
  RG_CHECK(w.rank() == 4, "conv kernel must be rank 4, got ", shape_str(w.shape));
  RG_CHECK(stride >= 1 && pad >= 0, "conv stride/pad invalid: ", stride, "/", pad);
  ConvDims d;
  d.n = static_cast<int>(x.shape[0]);
  d.ci = static_cast<int>(x.shape[1]);
  d.h = static_cast<int>(x.shape[2]);
  d.w = static_cast<int>(x.shape[3]);
  d.stride = stride;
  d.pad = pad;
  if (!transposed) {
    RG_CHECK(w.shape[1] == d.ci, "conv channel mismatch: input ", shape_str(x.shape),
             " vs kernel ", shape_str(w.shape));
    d.co = static_cast<int>(w.shape[0]);
    d.kh = static_cast<int>(w.shape[2]);
    d.kw = static_cast<int>(w.shape[3]);
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  } else {
    RG_CHECK(w.shape[0] == d.ci, "conv_transpose channel mismatch: input ",
             shape_str(x.shape), " vs kernel ", shape_str(w.shape));
    d.co = static_cast<int>(w.shape[1]);
    d.kh = static_cast<int>(w.shape[2]);
    d.kw = static_cast<int>(w.shape[3]);
    d.ho = (d.h - 1) * stride - 2 * pad + d.kh;
    d.wo = (d.w - 1) * stride - 2 * pad + d.kw;
  }
  RG_CHECK(d.ho > 0 && d.wo > 0, "conv output would be empty for input ",
           shape_str(x.shape), " kernel ", shape_str(w.shape));
  return d;
}
}  // namespace

Var Graph::conv2d(Var x, Var w, std::optional<Var> bias, int stride, int pad) {
  check_same_graph(x);
  check_same_graph(w);
  const Tensor& tx = tensor(x.id());
  const Tensor& tw = tensor(w.id());
  ConvDims d = make_conv_dims(tx, tw, false, stride, pad);
  const double* bptr = nullptr;
  if (bias) {
    check_same_graph(*bias);
    const Tensor& tb = tensor(bias->id());
    RG_CHECK(tb.numel() == d.co, "conv bias shape ", shape_str(tb.shape),
             " does not match out channels ", d.co);
    bptr = tb.values.data();
  }
  std::vector<double> y(static_cast<size_t>(d.n) * d.co * d.ho * d.wo);
  conv2d_fwd(tx.values.data(), tw.values.data(), bptr, y.data(), d);
  Node node;
  node.op = Op::kConv2d;
  node.inputs = {x.id(), w.id()};
  if (bias) node.inputs.push_back(bias->id());
  node.stride = stride;
  node.pad = pad;
  node.out = Tensor({d.n, d.co, d.ho, d.wo}, std::move(y));
  return Var(this, push(std::move(node)));
}

Var Graph::conv2d_transpose(Var x, Var w, std::optional<Var> bias, int stride, int pad) {
  check_same_graph(x);
  check_same_graph(w);
  const Tensor& tx = tensor(x.id());
  const Tensor& tw = tensor(w.id());
  ConvDims d = make_conv_dims(tx, tw, true, stride, pad);
  const double* bptr = nullptr;
  if (bias) {
    check_same_graph(*bias);
    const Tensor& tb = tensor(bias->id());
    RG_CHECK(tb.numel() == d.co, "conv_transpose bias shape ", shape_str(tb.shape),
             " does not match out channels ", d.co);
    bptr = tb.values.data();
  }
  std::vector<double> y(static_cast<size_t>(d.n) * d.co * d.ho * d.wo);
  convt2d_fwd(tx.values.data(), tw.values.data(), bptr, y.data(), d);
  Node node;
  node.op = Op::kConvT2d;
  node.inputs = {x.id(), w.id()};
  if (bias) node.inputs.push_back(bias->id());
  node.stride = stride;
  node.pad = pad;
  node.out = Tensor({d.n, d.co, d.ho, d.wo}, std::move(y));
  return Var(this, push(std::move(node)));
}

Var Graph::softmax(Var a, int axis) {
  check_same_graph(a);
  const Tensor& ta = tensor(a.id());
  RG_CHECK(axis >= 0 && axis < ta.rank(), "softmax axis ", axis, " out of range for ",
           shape_str(ta.shape));
  AxisView v = axis_view(ta.shape, axis);
  std::vector<double> y(ta.values.size());
  for (int64_t o = 0; o < v.outer; ++o) {
    for (int64_t in = 0; in < v.inner; ++in) {
      const int64_t base = o * v.n * v.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t k = 0; k < v.n; ++k)
        mx = std::max(mx, ta.values[static_cast<size_t>(base + k * v.inner)]);
      double denom = 0.0;
      for (int64_t k = 0; k < v.n; ++k) {
        const double e = std::exp(ta.values[static_cast<size_t>(base + k * v.inner)] - mx);
        y[static_cast<size_t>(base + k * v.inner)] = e;
        denom += e;
      }
      for (int64_t k = 0; k < v.n; ++k)
        y[static_cast<size_t>(base + k * v.inner)] /= denom;
    }
  }
  Node node;
  node.op = Op::kSoftmax;
  node.inputs = {a.id()};
  node.axis = axis;
  node.out = Tensor(ta.shape, std::move(y));
  return Var(this, push(std::move(node)));
}

Var Graph::sum(Var a, int axis) {
  check_same_graph(a);
  const Tensor& ta = tensor(a.id());
  Node node;
  node.op = Op::kSum;
  node.inputs = {a.id()};
  node.axis = axis;
  if (axis == kAllAxes) {
    double acc = 0.0;
    for (double x : ta.values) acc += x;
    node.out = Tensor::scalar_value(acc);
  } else {
    RG_CHECK(axis >= 0 && axis < ta.rank(), "sum axis ", axis, " out of range for ",
             shape_str(ta.shape));
    AxisView v = axis_view(ta.shape, axis);
    std::vector<double> y(static_cast<size_t>(v.outer * v.inner), 0.0);
    for (int64_t o = 0; o < v.outer; ++o)
      for (int64_t k = 0; k < v.n; ++k)
        for (int64_t in = 0; in < v.inner; ++in)
          y[static_cast<size_t>(o * v.inner + in)] +=
              ta.values[static_cast<size_t>((o * v.n + k) * v.inner + in)];
    node.out = Tensor(drop_axis(ta.shape, axis), std::move(y));
  }
  return Var(this, push(std::move(node)));
}

Var Graph::mean(Var a, int axis) {
  check_same_graph(a);
  const Tensor& ta = tensor(a.id());
  Node node;
  node.op = Op::kMean;
  node.inputs = {a.id()};
  node.axis = axis;
  if (axis == kAllAxes) {
    double acc = 0.0;
    for (double x : ta.values) acc += x;
    node.out = Tensor::scalar_value(acc / static_cast<double>(ta.numel()));
  } else {
    RG_CHECK(axis >= 0 && axis < ta.rank(), "mean axis ", axis, " out of range for ",
             shape_str(ta.shape));
    AxisView v = axis_view(ta.shape, axis);
    std::vector<double> y(static_cast<size_t>(v.outer * v.inner), 0.0);
    for (int64_t o = 0; o < v.outer; ++o)
      for (int64_t k = 0; k < v.n; ++k)
        for (int64_t in = 0; in < v.inner; ++in)
          y[static_cast<size_t>(o * v.inner + in)] +=
              ta.values[static_cast<size_t>((o * v.n + k) * v.inner + in)];
    for (double& x : y) x /= static_cast<double>(v.n);
    node.out = Tensor(drop_axis(ta.shape, axis), std::move(y));
  }
  return Var(this, push(std::move(node)));
}

Var Graph::l2_normalize(Var a, int axis) {
  check_same_graph(a);
  const Tensor& ta = tensor(a.id());
  RG_CHECK(axis >= 0 && axis < ta.rank(), "l2_normalize axis ", axis, " out of range for ",
           shape_str(ta.shape));
  AxisView v = axis_view(ta.shape, axis);
  std::vector<double> y(ta.values.size());
  for (int64_t o = 0; o < v.outer; ++o) {
    for (int64_t in = 0; in < v.inner; ++in) {
      const int64_t base = o * v.n * v.inner + in;
      double sq = 0.0;
      for (int64_t k = 0; k < v.n; ++k) {
        const double x = ta.values[static_cast<size_t>(base + k * v.inner)];
        sq += x * x;
      }
      const double nrm = std::sqrt(sq + 1e-24);
      for (int64_t k = 0; k < v.n; ++k)
        y[static_cast<size_t>(base + k * v.inner)] =
            ta.values[static_cast<size_t>(base + k * v.inner)] / nrm;
    }
  }
  Node node;
  node.op = Op::kL2Normalize;
  node.inputs = {a.id()};
  node.axis = axis;
  node.out = Tensor(ta.shape, std::move(y));
  return Var(this, push(std::move(node)));
}

Var Graph::instance_norm(Var x, double eps) {
  check_same_graph(x);
  const Tensor& tx = tensor(x.id());
  RG_CHECK(tx.rank() == 3 || tx.rank() == 4,
           "instance_norm expects [C,H,W] or [N,C,H,W], got ", shape_str(tx.shape));
  const int64_t planes = tx.rank() == 4 ? tx.shape[0] * tx.shape[1] : tx.shape[0];
  const int64_t m = tx.numel() / planes;
  RG_CHECK(m > 0, "instance_norm on empty plane");
  std::vector<double> y(tx.values.size());
  for (int64_t pl = 0; pl < planes; ++pl) {
    const double* xp = tx.values.data() + pl * m;
    double* yp = y.data() + pl * m;
    double mu = 0.0;
    for (int64_t i = 0; i < m; ++i) mu += xp[i];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (int64_t i = 0; i < m; ++i) {
      const double dxm = xp[i] - mu;
      var += dxm * dxm;
    }
    var /= static_cast<double>(m);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t i = 0; i < m; ++i) yp[i] = (xp[i] - mu) * inv;
  }
  Node node;
  node.op = Op::kInstanceNorm;
  node.inputs = {x.id()};
  node.a0 = eps;
  node.out = Tensor(tx.shape, std::move(y));
  return Var(this, push(std::move(node)));
}

Var Graph::reshape(Var a, Shape target) {
  check_same_graph(a);
  const Tensor& ta = tensor(a.id());
  RG_CHECK(shape_numel(target) == ta.numel(), "reshape from ", shape_str(ta.shape),
           " to ", shape_str(target), " changes element count");
  Node node;
  node.op = Op::kReshape;
  node.inputs = {a.id()};
  node.out = Tensor(std::move(target), ta.values);
  return Var(this, push(std::move(node)));
}

Var Graph::gather(Var a, std::shared_ptr<const std::vector<int64_t>> flat_indices) {
  check_same_graph(a);
  RG_CHECK(flat_indices != nullptr, "gather with null index set");
  const Tensor& ta = tensor(a.id());
  const std::vector<int64_t>& idx = *flat_indices;
  std::vector<double> y(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    RG_CHECK(idx[i] >= 0 && idx[i] < ta.numel(), "gather index ", idx[i],
             " out of range for ", shape_str(ta.shape));
    y[i] = ta.values[static_cast<size_t>(idx[i])];
  }
  const int64_t count = static_cast<int64_t>(y.size());
  Node node;
  node.op = Op::kGather;
  node.inputs = {a.id()};
  node.indices = std::move(flat_indices);
  node.out = Tensor({count}, std::move(y));
  return Var(this, push(std::move(node)));
}

Var Graph::gather(Var a, std::vector<int64_t> flat_indices) {
  return gather(a, std::make_shared<const std::vector<int64_t>>(std::move(flat_indices)));
}

Var Graph::concat(const std::vector<Var>& parts, int axis) {
  RG_CHECK(!parts.empty(), "concat of zero tensors");
  for (Var p : parts) check_same_graph(p);
  const Tensor& t0 = tensor(parts[0].id());
  RG_CHECK(axis >= 0 && axis < t0.rank(), "concat axis ", axis, " out of range for ",
           shape_str(t0.shape));
  Shape out_shape = t0.shape;
  int64_t total_axis = 0;
  for (Var p : parts) {
    const Tensor& tp = tensor(p.id());
    RG_CHECK(tp.rank() == t0.rank(), "concat rank mismatch: ", shape_str(t0.shape),
             " vs ", shape_str(tp.shape));
    for (int i = 0; i < t0.rank(); ++i) {
      if (i == axis) continue;
      RG_CHECK(tp.shape[static_cast<size_t>(i)] == t0.shape[static_cast<size_t>(i)],
               "concat shape mismatch: ", shape_str(t0.shape), " vs ", shape_str(tp.shape));
    }
    total_axis += tp.shape[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = total_axis;

  AxisView vo = axis_view(out_shape, axis);
  std::vector<double> y(static_cast<size_t>(shape_numel(out_shape)));
  int64_t offset = 0;
  for (Var p : parts) {
    const Tensor& tp = tensor(p.id());
    AxisView vp = axis_view(tp.shape, axis);
    for (int64_t o = 0; o < vp.outer; ++o) {
      const double* src = tp.values.data() + o * vp.n * vp.inner;
      double* dst = y.data() + (o * vo.n + offset) * vo.inner;
      std::memcpy(dst, src, static_cast<size_t>(vp.n * vp.inner) * sizeof(double));
    }
    offset += vp.n;
  }
  Node node;
  node.op = Op::kConcat;
  node.inputs.reserve(parts.size());
  for (Var p : parts) node.inputs.push_back(p.id());
  node.axis = axis;
  node.out = Tensor(std::move(out_shape), std::move(y));
  return Var(this, push(std::move(node)));
}

void Graph::backprop(int32_t node_id, const std::vector<double>& adj,
                     std::vector<std::vector<double>>& adjoints) const {
  const Node& n = nodes_[static_cast<size_t>(node_id)];
  if (n.op == Op::kLeaf || n.op == Op::kDetach) return;

  auto in_tensor = [&](size_t slot) -> const Tensor& {
    return nodes_[static_cast<size_t>(n.inputs[slot])].out;
  };
  auto in_adj = [&](size_t slot) -> std::vector<double>& {
    const Tensor& t = in_tensor(slot);
    return ensure(adjoints[static_cast<size_t>(n.inputs[slot])],
                  static_cast<size_t>(t.numel()));
  };

  switch (n.op) {
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
    case Op::kDiv:
    case Op::kMaximum:
    case Op::kMinimum: {
      const Tensor& ta = in_tensor(0);
      const Tensor& tb = in_tensor(1);
      std::vector<double>& da = in_adj(0);
      std::vector<double>& db = in_adj(1);
      const int64_t count = n.out.numel();
      const int64_t m = n.out.shape.empty() ? 1 : n.out.shape.back();
      for (int64_t i = 0; i < count; ++i) {
        int64_t ia = i, ib = i;
        if (n.bcast == 1) ia = 0;
        if (n.bcast == 4) ia = i % m;
        if (n.bcast == 2) ib = 0;
        if (n.bcast == 3) ib = i % m;
        const double g = adj[static_cast<size_t>(i)];
        const double x = ta.values[static_cast<size_t>(ia)];
        const double y = tb.values[static_cast<size_t>(ib)];
        switch (n.op) {
          case Op::kAdd:
            da[static_cast<size_t>(ia)] += g;
            db[static_cast<size_t>(ib)] += g;
            break;
          case Op::kSub:
            da[static_cast<size_t>(ia)] += g;
            db[static_cast<size_t>(ib)] -= g;
            break;
          case Op::kMul:
            da[static_cast<size_t>(ia)] += g * y;
            db[static_cast<size_t>(ib)] += g * x;
            break;
          case Op::kDiv:
            da[static_cast<size_t>(ia)] += g / y;
            db[static_cast<size_t>(ib)] -= g * x / (y * y);
            break;
          case Op::kMaximum:
            if (x >= y)
              da[static_cast<size_t>(ia)] += g;
            else
              db[static_cast<size_t>(ib)] += g;
            break;
          case Op::kMinimum:
            if (x <= y)
              da[static_cast<size_t>(ia)] += g;
            else
              db[static_cast<size_t>(ib)] += g;
            break;
          default: break;
        }
      }
      break;
    }
    case Op::kNeg: {
      std::vector<double>& da = in_adj(0);
      for (size_t i = 0; i < adj.size(); ++i) da[i] -= adj[i];
      break;
    }
    case Op::kAbs: {
      const Tensor& ta = in_tensor(0);
      std::vector<double>& da = in_adj(0);
      for (size_t i = 0; i < adj.size(); ++i) {
        const double x = ta.values[i];
        // subgradient at 0 is 0 by convention
        da[i] += x > 0.0 ? adj[i] : (x < 0.0 ? -adj[i] : 0.0);
      }
      break;
    }
    case Op::kExp: {
      std::vector<double>& da = in_adj(0);
      for (size_t i = 0; i < adj.size(); ++i) da[i] += adj[i] * n.out.values[i];
      break;
    }
    case Op::kLog: {
      const Tensor& ta = in_tensor(0);
      std::vector<double>& da = in_adj(0);
      for (size_t i = 0; i < adj.size(); ++i) da[i] += adj[i] / ta.values[i];
      break;
    }
    case Op::kPow: {
      const Tensor& ta = in_tensor(0);
      std::vector<double>& da = in_adj(0);
      for (size_t i = 0; i < adj.size(); ++i)
        da[i] += adj[i] * n.a0 * std::pow(ta.values[i], n.a0 - 1.0);
      break;
    }
    case Op::kRelu: {
      const Tensor& ta = in_tensor(0);
      std::vector<double>& da = in_adj(0);
      for (size_t i = 0; i < adj.size(); ++i)
        if (ta.values[i] > 0.0) da[i] += adj[i];
      break;
    }
    case Op::kLeakyRelu: {
      const Tensor& ta = in_tensor(0);
      std::vector<double>& da = in_adj(0);
      for (size_t i = 0; i < adj.size(); ++i)
        da[i] += ta.values[i] > 0.0 ? adj[i] : n.a0 * adj[i];
      break;
    }
    case Op::kTanh: {
      std::vector<double>& da = in_adj(0);
      for (size_t i = 0; i < adj.size(); ++i) {
        const double y = n.out.values[i];
        da[i] += adj[i] * (1.0 - y * y);
      }
      break;
    }
    case Op::kSigmoid: {
      std::vector<double>& da = in_adj(0);
      for (size_t i = 0; i < adj.size(); ++i) {
        const double y = n.out.values[i];
        da[i] += adj[i] * y * (1.0 - y);
      }
      break;
    }
    case Op::kClamp: {
      const Tensor& ta = in_tensor(0);
      std::vector<double>& da = in_adj(0);
      for (size_t i = 0; i < adj.size(); ++i) {
        const double x = ta.values[i];
        if (x > n.a0 && x < n.a1) da[i] += adj[i];
      }
      break;
    }
    case Op::kMatmul: {
      const Tensor& ta = in_tensor(0);
      const Tensor& tb = in_tensor(1);
      std::vector<double>& da = in_adj(0);
      std::vector<double>& db = in_adj(1);
      const int64_t m = ta.shape[0], k = ta.shape[1], nn = tb.shape[1];
      for (int64_t i = 0; i < m; ++i) {
        const double* grow = adj.data() + i * nn;
        for (int64_t kk = 0; kk < k; ++kk) {
          const double* brow = tb.values.data() + kk * nn;
          double acc = 0.0;
          for (int64_t j = 0; j < nn; ++j) acc += grow[j] * brow[j];
          da[static_cast<size_t>(i * k + kk)] += acc;
        }
        const double* arow = ta.values.data() + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
          const double av = arow[kk];
          double* dbrow = db.data() + kk * nn;
          for (int64_t j = 0; j < nn; ++j) dbrow[j] += av * grow[j];
        }
      }
      break;
    }
    case Op::kMatmulBt: {
      const Tensor& ta = in_tensor(0);
      const Tensor& tb = in_tensor(1);
      std::vector<double>& da = in_adj(0);
      std::vector<double>& db = in_adj(1);
      const int64_t m = ta.shape[0], d = ta.shape[1], nn = tb.shape[0];
      for (int64_t i = 0; i < m; ++i) {
        const double* grow = adj.data() + i * nn;
        const double* arow = ta.values.data() + i * d;
        double* darow = da.data() + i * d;
        for (int64_t j = 0; j < nn; ++j) {
          const double g = grow[j];
          const double* brow = tb.values.data() + j * d;
          double* dbrow = db.data() + j * d;
          for (int64_t kk = 0; kk < d; ++kk) {
            darow[kk] += g * brow[kk];
            dbrow[kk] += g * arow[kk];
          }
        }
      }
      break;
    }
    case Op::kConv2d: {
      const Tensor& tx = in_tensor(0);
      const Tensor& tw = in_tensor(1);
      ConvDims d = make_conv_dims(tx, tw, false, n.stride, n.pad);
      std::vector<double>& dx = in_adj(0);
      std::vector<double>& dw = in_adj(1);
      double* db = nullptr;
      if (n.inputs.size() == 3) db = in_adj(2).data();
      conv2d_bwd(tx.values.data(), tw.values.data(), adj.data(), dx.data(), dw.data(),
                 db, d);
      break;
    }
    case Op::kConvT2d: {
      const Tensor& tx = in_tensor(0);
      const Tensor& tw = in_tensor(1);
      ConvDims d = make_conv_dims(tx, tw, true, n.stride, n.pad);
      std::vector<double>& dx = in_adj(0);
      std::vector<double>& dw = in_adj(1);
      double* db = nullptr;
      if (n.inputs.size() == 3) db = in_adj(2).data();
      convt2d_bwd(tx.values.data(), tw.values.data(), adj.data(), dx.data(), dw.data(),
                  db, d);
      break;
    }
    case Op::kSoftmax: {
      std::vector<double>& da = in_adj(0);
      AxisView v = axis_view(n.out.shape, n.axis);
      for (int64_t o = 0; o < v.outer; ++o) {
        for (int64_t in = 0; in < v.inner; ++in) {
          const int64_t base = o * v.n * v.inner + in;
          double dot = 0.0;
          for (int64_t k = 0; k < v.n; ++k) {
            const size_t idx = static_cast<size_t>(base + k * v.inner);
            dot += adj[idx] * n.out.values[idx];
          }
          for (int64_t k = 0; k < v.n; ++k) {
            const size_t idx = static_cast<size_t>(base + k * v.inner);
            da[idx] += n.out.values[idx] * (adj[idx] - dot);
          }
        }
      }
      break;
    }
    case Op::kSum:
    case Op::kMean: {
      const Tensor& ta = in_tensor(0);
      std::vector<double>& da = in_adj(0);
      if (n.axis == kAllAxes) {
        const double g =
            n.op == Op::kMean ? adj[0] / static_cast<double>(ta.numel()) : adj[0];
        for (double& v : da) v += g;
      } else {
        AxisView v = axis_view(ta.shape, n.axis);
        const double scale = n.op == Op::kMean ? 1.0 / static_cast<double>(v.n) : 1.0;
        for (int64_t o = 0; o < v.outer; ++o)
          for (int64_t k = 0; k < v.n; ++k)
            for (int64_t in = 0; in < v.inner; ++in)
              da[static_cast<size_t>((o * v.n + k) * v.inner + in)] +=
                  scale * adj[static_cast<size_t>(o * v.inner + in)];
      }
      break;
    }
    case Op::kL2Normalize: {
      const Tensor& ta = in_tensor(0);
      std::vector<double>& da = in_adj(0);
      AxisView v = axis_view(ta.shape, n.axis);
      for (int64_t o = 0; o < v.outer; ++o) {
        for (int64_t in = 0; in < v.inner; ++in) {
          const int64_t base = o * v.n * v.inner + in;
          double sq = 0.0, dot = 0.0;
          for (int64_t k = 0; k < v.n; ++k) {
            const size_t idx = static_cast<size_t>(base + k * v.inner);
            sq += ta.values[idx] * ta.values[idx];
            dot += adj[idx] * n.out.values[idx];
          }
          const double nrm = std::sqrt(sq + 1e-24);
          for (int64_t k = 0; k < v.n; ++k) {
            const size_t idx = static_cast<size_t>(base + k * v.inner);
            da[idx] += (adj[idx] - n.out.values[idx] * dot) / nrm;
          }
        }
      }
      break;
    }
    case Op::kInstanceNorm: {
      const Tensor& ta = in_tensor(0);
      std::vector<double>& da = in_adj(0);
      const int64_t planes = ta.rank() == 4 ? ta.shape[0] * ta.shape[1] : ta.shape[0];
      const int64_t m = ta.numel() / planes;
      for (int64_t pl = 0; pl < planes; ++pl) {
        const double* xp = ta.values.data() + pl * m;
        const double* yp = n.out.values.data() + pl * m;
        const double* gp = adj.data() + pl * m;
        double* dp = da.data() + pl * m;
        double mu = 0.0;
        for (int64_t i = 0; i < m; ++i) mu += xp[i];
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (int64_t i = 0; i < m; ++i) {
          const double dxm = xp[i] - mu;
          var += dxm * dxm;
        }
        var /= static_cast<double>(m);
        const double inv = 1.0 / std::sqrt(var + n.a0);
        double gm = 0.0, gym = 0.0;
        for (int64_t i = 0; i < m; ++i) {
          gm += gp[i];
          gym += gp[i] * yp[i];
        }
        gm /= static_cast<double>(m);
        gym /= static_cast<double>(m);
        for (int64_t i = 0; i < m; ++i) dp[i] += inv * (gp[i] - gm - yp[i] * gym);
      }
      break;
    }
    case Op::kReshape: {
      std::vector<double>& da = in_adj(0);
      for (size_t i = 0; i < adj.size(); ++i) da[i] += adj[i];
      break;
    }
    case Op::kGather: {
      std::vector<double>& da = in_adj(0);
      const std::vector<int64_t>& idx = *n.indices;
      for (size_t i = 0; i < idx.size(); ++i)
        da[static_cast<size_t>(idx[i])] += adj[i];
      break;
    }
    case Op::kConcat: {
      AxisView vo = axis_view(n.out.shape, n.axis);
      int64_t offset = 0;
      for (size_t p = 0; p < n.inputs.size(); ++p) {
        const Tensor& tp = in_tensor(p);
        std::vector<double>& dp = in_adj(p);
        AxisView vp = axis_view(tp.shape, n.axis);
        for (int64_t o = 0; o < vp.outer; ++o) {
          const double* src = adj.data() + (o * vo.n + offset) * vo.inner;
          double* dst = dp.data() + o * vp.n * vp.inner;
          for (int64_t i = 0; i < vp.n * vp.inner; ++i) dst[i] += src[i];
        }
        offset += vp.n;
      }
      break;
    }
    case Op::kLeaf:
    case Op::kDetach:
      break;
  }
}

std::vector<std::vector<double>> Graph::gradients(Var output, const std::vector<Var>& wrt) {
  check_same_graph(output);
  const Tensor& out = tensor(output.id());
  RG_CHECK(out.numel() == 1, "gradients: output is not scalar, shape ",
           shape_str(out.shape));
  for (Var v : wrt) {
    check_same_graph(v);
    RG_CHECK(tensor(v.id()).requires_grad, "gradients: wrt tensor #", v.id(),
             " does not have requires_grad set");
  }

  // Ancestors of the output; detach blocks the walk.
  std::vector<char> needed(nodes_.size(), 0);
  needed[static_cast<size_t>(output.id())] = 1;
  for (int32_t id = output.id(); id >= 0; --id) {
    if (!needed[static_cast<size_t>(id)]) continue;
    const Node& node = nodes_[static_cast<size_t>(id)];
    if (node.op == Op::kDetach) continue;
    for (int32_t in : node.inputs) needed[static_cast<size_t>(in)] = 1;
  }

  std::vector<std::vector<double>> adjoints(nodes_.size());
  adjoints[static_cast<size_t>(output.id())] = {1.0};
  for (int32_t id = output.id(); id >= 0; --id) {
    if (!needed[static_cast<size_t>(id)]) continue;
    const std::vector<double>& adj = adjoints[static_cast<size_t>(id)];
    if (adj.empty()) continue;
    backprop(id, adj, adjoints);
  }

  std::vector<std::vector<double>> result;
  result.reserve(wrt.size());
  for (Var v : wrt) {
    std::vector<double>& g = adjoints[static_cast<size_t>(v.id())];
    if (g.empty()) g.assign(static_cast<size_t>(tensor(v.id()).numel()), 0.0);
    mutable_tensor(v.id()).grad = g;
    result.push_back(std::move(g));
  }
  return result;
}

Var operator+(Var a, Var b) { return a.graph()->add(a, b); }
Var operator-(Var a, Var b) { return a.graph()->sub(a, b); }
Var operator*(Var a, Var b) { return a.graph()->mul(a, b); }
Var operator/(Var a, Var b) { return a.graph()->div(a, b); }
Var operator-(Var a) { return a.graph()->neg(a); }
Var operator+(Var a, double b) { return a.graph()->add(a, a.graph()->constant(b)); }
Var operator+(double a, Var b) { return b.graph()->add(b.graph()->constant(a), b); }
Var operator-(Var a, double b) { return a.graph()->sub(a, a.graph()->constant(b)); }
Var operator-(double a, Var b) { return b.graph()->sub(b.graph()->constant(a), b); }
Var operator*(Var a, double b) { return a.graph()->mul(a, a.graph()->constant(b)); }
Var operator*(double a, Var b) { return b.graph()->mul(b.graph()->constant(a), b); }
Var operator/(Var a, double b) { return a.graph()->div(a, a.graph()->constant(b)); }
Var operator/(double a, Var b) { return b.graph()->div(b.graph()->constant(a), b); }

}  // namespace raingen::ad
