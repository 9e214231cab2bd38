#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace latgeo {

// All numeric data is 64-bit and row-major; checkpoints serialize the flat
// row-major buffer directly.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string shape_str(Eigen::Index rows, Eigen::Index cols);
std::string shape_str(const Matrix& m);

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One vertex of the define-by-run graph. Creation order is a topological
// order, so the backward sweep just walks reachable nodes by descending seq.
struct TensorNode {
  Matrix value;
  Matrix grad;                 // allocated on first use during backward
  bool requires_grad = false;
  bool leaf = false;
  bool grad_ready = false;     // a backward pass has deposited into grad
  std::uint64_t seq = 0;
  std::string name;            // parameters carry names for diagnostics
  std::vector<NodePtr> inputs;
  std::function<void(TensorNode&)> backprop;  // pushes this->grad into inputs

  Matrix& grad_buffer();       // grad sized+zeroed to match value on demand
};

// Value-semantics handle onto a shared node; copies alias the same storage,
// exactly like the expression results they come from.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const;
  Matrix& mutable_value() const;      // leaves only (optimizer updates)
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Eigen::Index size() const { return value().size(); }
  bool requires_grad() const;
  bool is_leaf() const;
  const std::string& name() const;
  double scalar() const;              // requires 1x1

  void zero_grad() const;             // clears grad + grad_ready (leaves)

  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

// ---- graph construction -----------------------------------------------------

Tensor constant(Matrix v);
Tensor constant_scalar(double v);
Tensor parameter(Matrix v, std::string name = "");

// ---- ops ---------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise ops accept equal shapes or a 1x1 operand broadcast against any
// shape; anything else is a dimension error naming both shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor ln(const Tensor& a);  // natural log, defined for strictly positive input
// max(x, floor) elementwise; preserves x bit-for-bit wherever x >= floor.
// Subgradient at the boundary is 0, matching the relu convention.
Tensor clamp_min(const Tensor& a, double floor);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }

// Row-wise softmax / log-softmax. A mask entry of false removes that column
// from the distribution of its row: weight exactly 0 (log-prob -inf) and no
// contribution to the normalizer. A fully masked row is an error.
Tensor softmax_rows(const Tensor& a, const BoolArray* mask = nullptr);
Tensor log_softmax_rows(const Tensor& a, const BoolArray* mask = nullptr);

// Per-row normalization over columns with trainable gain/bias of shape [1, d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Gathers rows of table by id; gradients scatter-add back into the table.
Tensor embed_lookup(const Tensor& table, const std::vector<int>& ids);

// Structural ops.
Tensor broadcast_rows(const Tensor& row, Eigen::Index n);  // [1,d] -> [n,d]
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, Eigen::Index begin, Eigen::Index count);
Tensor slice_cols(const Tensor& a, Eigen::Index begin, Eigen::Index count);
Tensor reshape(const Tensor& a, Eigen::Index rows, Eigen::Index cols);
Tensor sum_all(const Tensor& a);                              // -> 1x1
Tensor take_per_row(const Tensor& a, const std::vector<int>& col_ids);  // [n,1]

// Inverted dropout; identity when !training or rate == 0. The mask comes from
// the dedicated dropout stream so runs are reproducible.
Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng, bool training);

// ---- backward ----------------------------------------------------------------

// Reverse sweep from a scalar loss. Visits each reachable node exactly once.
// Calling backward twice into the same leaves without zero_grad in between is
// a contract error: silent gradient accumulation across steps hides bugs.
void backward(const Tensor& loss);

// ---- parameters ----------------------------------------------------------------

// Owns the trainable leaves of a model in creation order; that order is the
// checkpoint manifest order.
class ParamStore {
 public:
  Tensor create(const std::string& name, Matrix init);
  // Glorot uniform: +-sqrt(6 / (fan_in + fan_out)).
  Tensor create_glorot(const std::string& name, Eigen::Index rows,
                       Eigen::Index cols, std::mt19937_64& rng);
  Tensor create_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols);

  Tensor get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

}  // namespace latgeo
