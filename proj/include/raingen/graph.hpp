#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "raingen/tensor.hpp"

namespace raingen::ad {

// Differentiable primitives. kMatmulBt, kDetach, kClamp, kMaximum and
// kMinimum extend the core catalog; everything else is the minimum set the
// networks and losses need.
enum class Op : uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kAbs,
  kExp,
  kLog,
  kPow,
  kMatmul,
  kMatmulBt,
  kConv2d,
  kConvT2d,
  kRelu,
  kLeakyRelu,
  kTanh,
  kSigmoid,
  kSoftmax,
  kSum,
  kMean,
  kL2Normalize,
  kInstanceNorm,
  kReshape,
  kGather,
  kConcat,
  kDetach,
  kClamp,
  kMaximum,
  kMinimum,
};

const char* op_name(Op op);
std::vector<std::string> op_catalog();

class Graph;

// Lightweight handle to a node owned by a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* g, int32_t id) : graph_(g), id_(id) {}

  Graph* graph() const { return graph_; }
  int32_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr && id_ >= 0; }

  const Tensor& tensor() const;
  const Shape& shape() const { return tensor().shape; }
  double scalar() const { return tensor().scalar(); }

 private:
  Graph* graph_ = nullptr;
  int32_t id_ = -1;
};

// Reverse-mode tape. Nodes are appended in topological order by
// construction; backward walks them in exact reverse order. Forward
// evaluation happens eagerly at build time and every op output is checked
// finite. All accumulation orders are fixed so reruns are bit-identical.
// One graph is single-threaded (node tensors are immutable once pushed, so
// read-sharing is safe); distinct graphs may run in parallel.
class Graph {
 public:
  static constexpr int kAllAxes = -1;

  Var leaf(Tensor t);
  Var constant(double v);
  Var constant(Tensor t);  // leaf with requires_grad forced off

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var neg(Var a);
  Var abs(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var pow(Var a, double exponent);
  Var relu(Var a);
  Var leaky_relu(Var a, double slope);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var maximum(Var a, Var b);
  Var minimum(Var a, Var b);

  Var matmul(Var a, Var b);     // [m,k] x [k,n]
  Var matmul_bt(Var a, Var b);  // [m,d] x [n,d]^T -> [m,n]

  // x [N,Ci,H,W], w [Co,Ci,kh,kw]; out H = (H + 2p - kh)/s + 1 (floor).
  Var conv2d(Var x, Var w, std::optional<Var> bias, int stride, int pad);
  // x [N,Ci,H,W], w [Ci,Co,kh,kw]; out H = (H - 1)*s - 2p + kh.
  Var conv2d_transpose(Var x, Var w, std::optional<Var> bias, int stride, int pad);

  Var softmax(Var a, int axis);
  Var sum(Var a, int axis = kAllAxes);
  Var mean(Var a, int axis = kAllAxes);
  Var l2_normalize(Var a, int axis);
  Var instance_norm(Var x, double eps = 1e-5);

  Var reshape(Var a, Shape target);
  // Flat-index gather over the input's contiguous storage; returns 1-D.
  // The shared form lets callers reuse one index set across many nodes.
  Var gather(Var a, std::shared_ptr<const std::vector<int64_t>> flat_indices);
  Var gather(Var a, std::vector<int64_t> flat_indices);
  Var concat(const std::vector<Var>& parts, int axis);

  Var detach(Var a);
  Var clamp(Var a, double lo, double hi);

  // d(output)/d(wrt[i]) for a scalar output. Also records the result in the
  // wrt tensors' grad field. Deterministic for a fixed graph.
  std::vector<std::vector<double>> gradients(Var output, const std::vector<Var>& wrt);

  const Tensor& tensor(int32_t id) const;
  Tensor& mutable_tensor(int32_t id);
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::vector<int32_t> inputs;
    Tensor out;
    double a0 = 0.0;  // slope / exponent / clamp lo / eps
    double a1 = 0.0;  // clamp hi
    int axis = 0;
    int bcast = 0;  // 0 same shape, 1 a scalar, 2 b scalar, 3 b row-vec, 4 a row-vec
    int stride = 1;
    int pad = 0;
    std::shared_ptr<const std::vector<int64_t>> indices;
  };

  int32_t push(Node n);
  Var binary(Op op, Var a, Var b);
  Var unary(Op op, Var a, double a0 = 0.0, double a1 = 0.0);
  void check_same_graph(Var v) const;
  void backprop(int32_t node_id, const std::vector<double>& adj,
                std::vector<std::vector<double>>& adjoints) const;

  // deque keeps node (and tensor) references stable as the tape grows
  std::deque<Node> nodes_;
};

// Convenience operators so loss code reads like the math.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);

}  // namespace raingen::ad
