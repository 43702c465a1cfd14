#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace dlif {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// The closed set of differentiable primitives. Every kind has a forward rule
// and a vector-Jacobian backward rule in tensor.cpp.
enum class Prim {
  leaf,
  conv2d,
  linear,
  relu,
  sigmoid,
  softmax,
  l2_normalize,
  channel_mean,
  channel_std,
  global_avg_pool,
  concat,
  add,
  mul,
  scale,
  matmul,
  transpose,
  sum,
  mean,
  square,
  log,
  exp,
  slice,
  broadcast_channel,
};

const char* prim_name(Prim kind);

// Kind-specific attributes. Each primitive reads only the fields it needs.
struct Attrs {
  int axis = -1;        // softmax, l2_normalize, concat, slice
  int stride = 1;       // conv2d
  int pad = 0;          // conv2d
  double factor = 1.0;  // scale
  double eps = 1e-6;    // channel_std (inside the square root)
  int start = 0;        // slice
  int stop = 0;         // slice
  int height = 0;       // broadcast_channel
  int width = 0;        // broadcast_channel
};

class TensorNode;
using Tensor = std::shared_ptr<TensorNode>;

// One node of the computation record: value buffer plus provenance.
class TensorNode {
 public:
  Shape shape;
  std::vector<double> data;  // row-major, product(shape) elements
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first backward touches the node

  Prim op = Prim::leaf;
  Attrs attrs;
  std::vector<Tensor> parents;

  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data.size()); }
  double scalar() const;

  void ensure_grad();
  void zero_grad();
};

Tensor make_tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
Tensor zeros(Shape shape, bool requires_grad = false);
Tensor full(Shape shape, double value, bool requires_grad = false);
// Value snapshot with no provenance; gradient never flows through it.
Tensor detach(const Tensor& t);

// Flat offset of a multi-index.
int64_t flat_index(const Shape& shape, const std::vector<int>& idx);

Tensor apply_primitive(Prim kind, const std::vector<Tensor>& inputs, const Attrs& attrs = {});

// Convenience wrappers over apply_primitive.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor l2_normalize(const Tensor& x, int axis);
Tensor channel_mean(const Tensor& x);
Tensor channel_std(const Tensor& x, double eps = 1e-6);
Tensor global_avg_pool(const Tensor& x);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor square(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor slice(const Tensor& x, int axis, int start, int stop);
Tensor broadcast_channel(const Tensor& x, int height, int width);

// Reverse-mode sweep from a scalar loss. Gradients of all requires_grad
// ancestors are accumulated into their grad buffers; repeated calls without
// zeroing add up.
void backward(const Tensor& loss);

void zero_all_grads(const std::vector<Tensor>& params);

}  // namespace dlif
