#include "latgeo/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "latgeo/error.hpp"
#include "latgeo/rng.hpp"

namespace latgeo {

namespace {

std::atomic<std::uint64_t> g_seq{1};

NodePtr new_node(Matrix value, std::vector<NodePtr> inputs,
                 std::function<void(TensorNode&)> backprop) {
  auto n = std::make_shared<TensorNode>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  n->seq = g_seq.fetch_add(1);
  for (const auto& in : n->inputs) {
    if (in->requires_grad) n->requires_grad = true;
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

void acc(TensorNode& n, const Matrix& g) {
  if (n.requires_grad) n.grad_buffer() += g;
}

void check_same_or_scalar(const char* op, const Tensor& a, const Tensor& b) {
  const bool ok = (a.rows() == b.rows() && a.cols() == b.cols()) ||
                  a.size() == 1 || b.size() == 1;
  if (!ok) {
    throw DimensionError(std::string(op) + ": incompatible shapes " +
                         shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
}

}  // namespace

std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

std::string shape_str(const Matrix& m) { return shape_str(m.rows(), m.cols()); }

Matrix& TensorNode::grad_buffer() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
  return grad;
}

const Matrix& Tensor::value() const {
  if (!node_) throw ContractError("tensor: use of an undefined tensor");
  return node_->value;
}

Matrix& Tensor::mutable_value() const {
  if (!node_) throw ContractError("tensor: use of an undefined tensor");
  if (!node_->leaf) throw ContractError("tensor: only leaf values may be mutated");
  return node_->value;
}

const Matrix& Tensor::grad() const {
  if (!node_) throw ContractError("tensor: use of an undefined tensor");
  return node_->grad_buffer();
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->leaf; }

const std::string& Tensor::name() const {
  static const std::string empty;
  return node_ ? node_->name : empty;
}

double Tensor::scalar() const {
  if (size() != 1) {
    throw ContractError("tensor: scalar() requires a 1x1 value, got " +
                        shape_str(value()));
  }
  return value()(0, 0);
}

void Tensor::zero_grad() const {
  if (!node_) return;
  node_->grad.setZero();
  node_->grad_ready = false;
}

Tensor constant(Matrix v) {
  auto n = std::make_shared<TensorNode>();
  n->value = std::move(v);
  n->leaf = true;
  n->seq = g_seq.fetch_add(1);
  return Tensor(std::move(n));
}

Tensor constant_scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Tensor parameter(Matrix v, std::string name) {
  auto n = std::make_shared<TensorNode>();
  n->value = std::move(v);
  n->leaf = true;
  n->requires_grad = true;
  n->name = std::move(name);
  n->seq = g_seq.fetch_add(1);
  return Tensor(std::move(n));
}

// ---- ops ---------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree: " +
                         shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
  Matrix out = a.value() * b.value();
  return Tensor(new_node(std::move(out), {a.node(), b.node()}, [](TensorNode& s) {
    TensorNode& na = *s.inputs[0];
    TensorNode& nb = *s.inputs[1];
    if (na.requires_grad) na.grad_buffer() += s.grad * nb.value.transpose();
    if (nb.requires_grad) nb.grad_buffer() += na.value.transpose() * s.grad;
  }));
}

Tensor transpose(const Tensor& a) {
  Matrix out = a.value().transpose();
  return Tensor(new_node(std::move(out), {a.node()}, [](TensorNode& s) {
    acc(*s.inputs[0], s.grad.transpose());
  }));
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_or_scalar("add", a, b);
  Matrix out;
  if (a.size() == 1 && b.size() > 1) {
    out = b.value().array() + a.value()(0, 0);
  } else if (b.size() == 1 && a.size() > 1) {
    out = a.value().array() + b.value()(0, 0);
  } else {
    out = a.value() + b.value();
  }
  return Tensor(new_node(std::move(out), {a.node(), b.node()}, [](TensorNode& s) {
    for (auto& in : s.inputs) {
      if (!in->requires_grad) continue;
      if (in->value.size() == 1 && s.grad.size() > 1) {
        in->grad_buffer()(0, 0) += s.grad.sum();
      } else {
        in->grad_buffer() += s.grad;
      }
    }
  }));
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_or_scalar("mul", a, b);
  Matrix out;
  if (a.size() == 1 && b.size() > 1) {
    out = b.value() * a.value()(0, 0);
  } else if (b.size() == 1 && a.size() > 1) {
    out = a.value() * b.value()(0, 0);
  } else {
    out = a.value().cwiseProduct(b.value());
  }
  return Tensor(new_node(std::move(out), {a.node(), b.node()}, [](TensorNode& s) {
    TensorNode& na = *s.inputs[0];
    TensorNode& nb = *s.inputs[1];
    auto side = [&](TensorNode& x, TensorNode& other) {
      if (!x.requires_grad) return;
      if (x.value.size() == 1 && s.grad.size() > 1) {
        x.grad_buffer()(0, 0) += (s.grad.cwiseProduct(other.value)).sum();
      } else if (other.value.size() == 1 && s.grad.size() > 1) {
        x.grad_buffer() += s.grad * other.value(0, 0);
      } else {
        x.grad_buffer() += s.grad.cwiseProduct(other.value);
      }
    };
    side(na, nb);
    side(nb, na);
  }));
}

Tensor scale(const Tensor& a, double s) {
  Matrix out = a.value() * s;
  return Tensor(new_node(std::move(out), {a.node()}, [s](TensorNode& self) {
    acc(*self.inputs[0], Matrix(self.grad * s));
  }));
}

Tensor relu(const Tensor& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return Tensor(new_node(std::move(out), {a.node()}, [](TensorNode& s) {
    TensorNode& in = *s.inputs[0];
    if (!in.requires_grad) return;
    // Subgradient at exactly 0 is 0.
    in.grad_buffer() +=
        (in.value.array() > 0.0).cast<double>().matrix().cwiseProduct(s.grad);
  }));
}

Tensor sigmoid(const Tensor& a) {
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return Tensor(new_node(std::move(out), {a.node()}, [](TensorNode& s) {
    const auto y = s.value.array();
    acc(*s.inputs[0], Matrix((s.grad.array() * y * (1.0 - y)).matrix()));
  }));
}

Tensor ln(const Tensor& a) {
  if ((a.value().array() <= 0.0).any()) {
    throw ContractError("ln: input must be strictly positive");
  }
  Matrix out = a.value().array().log().matrix();
  return Tensor(new_node(std::move(out), {a.node()}, [](TensorNode& s) {
    acc(*s.inputs[0], Matrix((s.grad.array() / s.inputs[0]->value.array()).matrix()));
  }));
}

Tensor clamp_min(const Tensor& a, double floor) {
  Matrix out = a.value().cwiseMax(floor);
  return Tensor(new_node(std::move(out), {a.node()}, [floor](TensorNode& s) {
    TensorNode& in = *s.inputs[0];
    if (!in.requires_grad) return;
    in.grad_buffer() +=
        (in.value.array() > floor).cast<double>().matrix().cwiseProduct(s.grad);
  }));
}

namespace {

void check_mask(const char* op, const Tensor& a, const BoolArray* mask) {
  if (!mask) return;
  if (mask->rows() != a.rows() || mask->cols() != a.cols()) {
    throw DimensionError(std::string(op) + ": mask shape " +
                         shape_str(mask->rows(), mask->cols()) +
                         " does not match input " + shape_str(a.value()));
  }
  for (Eigen::Index r = 0; r < mask->rows(); ++r) {
    if (!mask->row(r).any()) {
      throw ContractError(std::string(op) + ": fully masked row " + std::to_string(r));
    }
  }
}

}  // namespace

Tensor softmax_rows(const Tensor& a, const BoolArray* mask) {
  check_mask("softmax_rows", a, mask);
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask && !(*mask)(r, c)) continue;
      mx = std::max(mx, x(r, c));
    }
    double sum = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask && !(*mask)(r, c)) {
        out(r, c) = 0.0;
      } else {
        out(r, c) = std::exp(x(r, c) - mx);
        sum += out(r, c);
      }
    }
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (!mask || (*mask)(r, c)) out(r, c) /= sum;
    }
  }
  BoolArray mask_copy;
  const bool has_mask = mask != nullptr;
  if (has_mask) mask_copy = *mask;
  return Tensor(new_node(std::move(out), {a.node()},
                         [has_mask, mask_copy](TensorNode& s) {
    TensorNode& in = *s.inputs[0];
    if (!in.requires_grad) return;
    Matrix& gin = in.grad_buffer();
    const Matrix& y = s.value;
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        if (has_mask && !mask_copy(r, c)) continue;
        dot += s.grad(r, c) * y(r, c);
      }
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        if (has_mask && !mask_copy(r, c)) continue;
        gin(r, c) += y(r, c) * (s.grad(r, c) - dot);
      }
    }
  }));
}

Tensor log_softmax_rows(const Tensor& a, const BoolArray* mask) {
  check_mask("log_softmax_rows", a, mask);
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask && !(*mask)(r, c)) continue;
      mx = std::max(mx, x(r, c));
    }
    double sum = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask && !(*mask)(r, c)) continue;
      sum += std::exp(x(r, c) - mx);
    }
    const double lse = mx + std::log(sum);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      out(r, c) = (mask && !(*mask)(r, c))
                      ? -std::numeric_limits<double>::infinity()
                      : x(r, c) - lse;
    }
  }
  BoolArray mask_copy;
  const bool has_mask = mask != nullptr;
  if (has_mask) mask_copy = *mask;
  return Tensor(new_node(std::move(out), {a.node()},
                         [has_mask, mask_copy](TensorNode& s) {
    TensorNode& in = *s.inputs[0];
    if (!in.requires_grad) return;
    Matrix& gin = in.grad_buffer();
    const Matrix& y = s.value;
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      double gsum = 0.0;
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        if (has_mask && !mask_copy(r, c)) continue;
        gsum += s.grad(r, c);
      }
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        if (has_mask && !mask_copy(r, c)) continue;
        gin(r, c) += s.grad(r, c) - std::exp(y(r, c)) * gsum;
      }
    }
  }));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const Eigen::Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw DimensionError("layer_norm: gain/bias must be [1x" + std::to_string(d) +
                         "], got " + shape_str(gain.value()) + " and " +
                         shape_str(bias.value()));
  }
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), d);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();  // population
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std(r) = inv;
    xhat.row(r) = (xv.row(r).array() - mu) * inv;
  }
  Matrix out =
      (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
      bias.value().row(0).array();
  return Tensor(new_node(
      std::move(out), {x.node(), gain.node(), bias.node()},
      [xhat, inv_std](TensorNode& s) {
        TensorNode& nx = *s.inputs[0];
        TensorNode& ng = *s.inputs[1];
        TensorNode& nb = *s.inputs[2];
        const Eigen::Index d = xhat.cols();
        if (ng.requires_grad) {
          ng.grad_buffer() += (s.grad.cwiseProduct(xhat)).colwise().sum();
        }
        if (nb.requires_grad) nb.grad_buffer() += s.grad.colwise().sum();
        if (nx.requires_grad) {
          using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;
          Matrix& gx = nx.grad_buffer();
          const RowArray gainrow = ng.value.row(0).array();
          for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
            const RowArray xh = xhat.row(r).array();
            const RowArray gg = s.grad.row(r).array() * gainrow;
            const double m1 = gg.mean();
            const double m2 = (gg * xh).mean();
            gx.row(r) += (inv_std(r) * (gg - m1 - xh * m2)).matrix();
          }
          (void)d;
        }
      }));
}

Tensor embed_lookup(const Tensor& table, const std::vector<int>& ids) {
  const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
  if (n == 0) throw ContractError("embed_lookup: empty id sequence");
  Matrix out(n, table.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= table.rows()) {
      throw IndexError("embed_lookup: id " + std::to_string(id) +
                       " out of range [0," + std::to_string(table.rows()) +
                       ") at position " + std::to_string(i));
    }
    out.row(i) = table.value().row(id);
  }
  auto ids_copy = ids;
  return Tensor(new_node(std::move(out), {table.node()},
                         [ids_copy](TensorNode& s) {
    TensorNode& t = *s.inputs[0];
    if (!t.requires_grad) return;
    Matrix& g = t.grad_buffer();
    for (std::size_t i = 0; i < ids_copy.size(); ++i) {
      g.row(ids_copy[i]) += s.grad.row(static_cast<Eigen::Index>(i));
    }
  }));
}

Tensor broadcast_rows(const Tensor& row, Eigen::Index n) {
  if (row.rows() != 1) {
    throw DimensionError("broadcast_rows: expected a [1xd] row, got " +
                         shape_str(row.value()));
  }
  Matrix out = row.value().replicate(n, 1);
  return Tensor(new_node(std::move(out), {row.node()}, [](TensorNode& s) {
    TensorNode& in = *s.inputs[0];
    if (in.requires_grad) in.grad_buffer() += s.grad.colwise().sum();
  }));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " +
                           shape_str(parts.front().value()) + " vs " +
                           shape_str(p.value()));
    }
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  std::vector<NodePtr> ins;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
    ins.push_back(p.node());
  }
  return Tensor(new_node(std::move(out), std::move(ins), [](TensorNode& s) {
    Eigen::Index at = 0;
    for (auto& in : s.inputs) {
      if (in->requires_grad) {
        in->grad_buffer() += s.grad.middleRows(at, in->value.rows());
      }
      at += in->value.rows();
    }
  }));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " +
                           shape_str(parts.front().value()) + " vs " +
                           shape_str(p.value()));
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  std::vector<NodePtr> ins;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    ins.push_back(p.node());
  }
  return Tensor(new_node(std::move(out), std::move(ins), [](TensorNode& s) {
    Eigen::Index at = 0;
    for (auto& in : s.inputs) {
      if (in->requires_grad) {
        in->grad_buffer() += s.grad.middleCols(at, in->value.cols());
      }
      at += in->value.cols();
    }
  }));
}

Tensor slice_rows(const Tensor& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) {
    throw IndexError("slice_rows: range [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") out of " +
                     shape_str(a.value()));
  }
  Matrix out = a.value().middleRows(begin, count);
  return Tensor(new_node(std::move(out), {a.node()}, [begin, count](TensorNode& s) {
    TensorNode& in = *s.inputs[0];
    if (in.requires_grad) in.grad_buffer().middleRows(begin, count) += s.grad;
  }));
}

Tensor slice_cols(const Tensor& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) {
    throw IndexError("slice_cols: range [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") out of " +
                     shape_str(a.value()));
  }
  Matrix out = a.value().middleCols(begin, count);
  return Tensor(new_node(std::move(out), {a.node()}, [begin, count](TensorNode& s) {
    TensorNode& in = *s.inputs[0];
    if (in.requires_grad) in.grad_buffer().middleCols(begin, count) += s.grad;
  }));
}

Tensor reshape(const Tensor& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.value()) + " as " +
                         shape_str(rows, cols));
  }
  // Row-major storage, so the flat buffer reinterprets directly.
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return Tensor(new_node(std::move(out), {a.node()}, [](TensorNode& s) {
    TensorNode& in = *s.inputs[0];
    if (in.requires_grad) {
      in.grad_buffer() += Eigen::Map<const Matrix>(s.grad.data(), in.value.rows(),
                                                   in.value.cols());
    }
  }));
}

Tensor sum_all(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return Tensor(new_node(std::move(out), {a.node()}, [](TensorNode& s) {
    TensorNode& in = *s.inputs[0];
    if (in.requires_grad) {
      in.grad_buffer().array() += s.grad(0, 0);
    }
  }));
}

Tensor take_per_row(const Tensor& a, const std::vector<int>& col_ids) {
  if (static_cast<Eigen::Index>(col_ids.size()) != a.rows()) {
    throw DimensionError("take_per_row: need one column id per row; got " +
                         std::to_string(col_ids.size()) + " ids for " +
                         shape_str(a.value()));
  }
  Matrix out(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const int c = col_ids[static_cast<std::size_t>(r)];
    if (c < 0 || c >= a.cols()) {
      throw IndexError("take_per_row: column " + std::to_string(c) +
                       " out of range [0," + std::to_string(a.cols()) +
                       ") at row " + std::to_string(r));
    }
    out(r, 0) = a.value()(r, c);
  }
  auto ids = col_ids;
  return Tensor(new_node(std::move(out), {a.node()}, [ids](TensorNode& s) {
    TensorNode& in = *s.inputs[0];
    if (!in.requires_grad) return;
    Matrix& g = in.grad_buffer();
    for (Eigen::Index r = 0; r < s.value.rows(); ++r) {
      g(r, ids[static_cast<std::size_t>(r)]) += s.grad(r, 0);
    }
  }));
}

Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return a;
  const double keep = 1.0 - rate;
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      mask(r, c) = uniform01(rng) < keep ? 1.0 / keep : 0.0;
    }
  }
  Matrix out = a.value().cwiseProduct(mask);
  return Tensor(new_node(std::move(out), {a.node()}, [mask](TensorNode& s) {
    acc(*s.inputs[0], Matrix(s.grad.cwiseProduct(mask)));
  }));
}

// ---- backward ----------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss tensor");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be a 1x1 scalar, got " +
                        shape_str(loss.value()));
  }
  // Gather the reachable subgraph.
  std::vector<TensorNode*> nodes;
  std::unordered_set<TensorNode*> seen;
  std::vector<TensorNode*> stack{loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    TensorNode* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& in : n->inputs) {
      if (seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  for (TensorNode* n : nodes) {
    if (n->leaf && n->requires_grad && n->grad_ready) {
      throw ContractError(
          "backward: gradients already present on '" + n->name +
          "'; reset gradients before running another backward pass");
    }
  }
  // Creation order is a topological order of the DAG.
  std::sort(nodes.begin(), nodes.end(),
            [](const TensorNode* a, const TensorNode* b) { return a->seq > b->seq; });
  loss.node()->grad_buffer()(0, 0) += 1.0;
  for (TensorNode* n : nodes) {
    if (n->requires_grad && n->backprop) n->backprop(*n);
  }
  for (TensorNode* n : nodes) {
    if (n->leaf && n->requires_grad) n->grad_ready = true;
  }
}

// ---- parameters ----------------------------------------------------------------

Tensor ParamStore::create(const std::string& name, Matrix init) {
  if (name.empty()) throw ContractError("param store: parameter name must be non-empty");
  if (has(name)) throw ContractError("param store: duplicate parameter '" + name + "'");
  Tensor t = parameter(std::move(init), name);
  items_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::create_glorot(const std::string& name, Eigen::Index rows,
                                 Eigen::Index cols, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = uniform(rng, -bound, bound);
    }
  }
  return create(name, std::move(m));
}

Tensor ParamStore::create_zeros(const std::string& name, Eigen::Index rows,
                                Eigen::Index cols) {
  return create(name, Matrix::Zero(rows, cols));
}

Tensor ParamStore::get(const std::string& name) const {
  for (const auto& [k, t] : items_) {
    if (k == name) return t;
  }
  throw IndexError("param store: no parameter named '" + name + "'");
}

bool ParamStore::has(const std::string& name) const {
  for (const auto& [k, t] : items_) {
    if (k == name) return true;
  }
  return false;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [k, t] : items_) n += static_cast<std::size_t>(t.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [k, t] : items_) t.zero_grad();
}

}  // namespace latgeo
