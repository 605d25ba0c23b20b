#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lfit/errors.hpp"

namespace lfit {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Row-major dense matrix. Every tensor is stored as one of these: leading
/// axes are flattened into rows, the last axis runs along columns, so the
/// buffer order matches C order of the n-dimensional shape.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Append-only record of differentiable operations for one forward pass.
///
/// Nodes are appended in execution order, so every node's parents precede it
/// and a single reverse sweep is a valid topological traversal. Gradient
/// buffers are allocated lazily; an empty buffer means "no gradient reached
/// this node".
template <typename Scalar>
class GradTape {
 public:
  using Matrix = RowMatrix<Scalar>;
  using BackwardFn = std::function<void(const Matrix& grad_out, GradTape& tape)>;

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  std::size_t add_leaf(Index rows, Index cols) { return push({}, rows, cols, nullptr); }

  std::size_t add_node(std::vector<std::size_t> parents, Index rows, Index cols, BackwardFn backward) {
    for (std::size_t p : parents) {
      if (p >= nodes_.size()) throw ContractError("tape parent index out of range");
    }
    return push(std::move(parents), rows, cols, std::move(backward));
  }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Matrix& buf = grads_[id];
    eigen_assert(g.rows() == nodes_[id].rows && g.cols() == nodes_[id].cols);
    if (buf.size() == 0) {
      buf = g;
    } else {
      buf += g;
    }
  }

  /// Gradient of the last backward pass with respect to node `id` (zeros if
  /// the node did not participate).
  Matrix gradient(std::size_t id) const {
    const auto& node = nodes_.at(id);
    if (grads_[id].size() == 0) return Matrix::Zero(node.rows, node.cols);
    return grads_[id];
  }

  /// Reverse sweep from a scalar node. A tape supports exactly one sweep.
  void backward(std::size_t loss) {
    if (loss >= nodes_.size()) throw ContractError("backward: loss is not recorded on this tape");
    if (nodes_[loss].rows * nodes_[loss].cols != 1) throw ContractError("backward: loss must be a scalar");
    if (swept_) throw ContractError("backward: tape was already consumed");
    swept_ = true;
    grads_[loss] = Matrix::Ones(1, 1);
    for (std::size_t id = loss + 1; id-- > 0;) {
      if (grads_[id].size() == 0 || !nodes_[id].backward) continue;
      nodes_[id].backward(grads_[id], *this);
      ++visits_;
    }
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t visits() const { return visits_; }

 private:
  struct Node {
    std::vector<std::size_t> parents;
    Index rows = 0;
    Index cols = 0;
    BackwardFn backward;
  };

  std::size_t push(std::vector<std::size_t> parents, Index rows, Index cols, BackwardFn backward) {
    nodes_.push_back(Node{std::move(parents), rows, cols, std::move(backward)});
    grads_.emplace_back();
    return nodes_.size() - 1;
  }

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
  std::size_t visits_ = 0;
  bool swept_ = false;
};

/// Dense n-dimensional array with an optional link into a gradient tape.
///
/// Values are immutable once created; copies share the buffer.
template <typename Scalar>
class BasicTensor {
 public:
  using Matrix = RowMatrix<Scalar>;

  BasicTensor() : BasicTensor(Matrix(0, 0)) {}

  explicit BasicTensor(Matrix value)
      : shape_{value.rows(), value.cols()}, data_(std::make_shared<const Matrix>(std::move(value))) {}

  BasicTensor(Shape shape, Matrix value) : shape_(std::move(shape)) {
    if (shape_numel(shape_) != value.size()) {
      throw DimensionError("tensor shape " + shape_string(shape_) + " does not match buffer of " +
                           std::to_string(value.size()) + " values");
    }
    const auto [rows, cols] = matrix_extents(shape_);
    if (value.rows() != rows || value.cols() != cols) {
      Matrix reshaped = Eigen::Map<const Matrix>(value.data(), rows, cols);
      value = std::move(reshaped);
    }
    data_ = std::make_shared<const Matrix>(std::move(value));
  }

  static BasicTensor from_values(Shape shape, const std::vector<Scalar>& values) {
    const auto [rows, cols] = matrix_extents(shape);
    if (static_cast<Index>(values.size()) != rows * cols) {
      throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
    }
    Matrix m = Eigen::Map<const Matrix>(values.data(), rows, cols);
    return BasicTensor(std::move(shape), std::move(m));
  }

  static BasicTensor scalar(Scalar v) { return BasicTensor(Shape{}, Matrix::Constant(1, 1, v)); }

  static BasicTensor zeros(Shape shape) {
    const auto [rows, cols] = matrix_extents(shape);
    return BasicTensor(std::move(shape), Matrix::Zero(rows, cols));
  }

  /// Rows/columns of the matrix view for a given shape.
  static std::pair<Index, Index> matrix_extents(const Shape& shape) {
    if (shape.empty()) return {1, 1};
    const Index cols = shape.back();
    return {cols == 0 ? 0 : shape_numel(shape) / cols, cols};
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index numel() const { return data_->size(); }
  Index rows() const { return data_->rows(); }
  Index cols() const { return data_->cols(); }
  const Matrix& value() const { return *data_; }
  const std::shared_ptr<const Matrix>& storage() const { return data_; }
  Scalar operator()(Index r, Index c) const { return (*data_)(r, c); }

  Scalar item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
    return (*data_)(0, 0);
  }

  std::vector<Scalar> to_vector() const { return std::vector<Scalar>(data_->data(), data_->data() + numel()); }

  GradTape<Scalar>* tape() const { return tape_; }
  std::size_t node() const { return node_; }
  bool tracked() const { return tape_ != nullptr; }

  BasicTensor detach() const { return BasicTensor(shape_, data_, nullptr, 0); }

  /// Registers this value as a new leaf of `tape`.
  BasicTensor track(GradTape<Scalar>& tape) const {
    return BasicTensor(shape_, data_, &tape, tape.add_leaf(rows(), cols()));
  }

  static BasicTensor attached(Shape shape, Matrix value, GradTape<Scalar>* tape, std::size_t node) {
    BasicTensor t(std::move(shape), std::move(value));
    t.tape_ = tape;
    t.node_ = node;
    return t;
  }

 private:
  BasicTensor(Shape shape, std::shared_ptr<const Matrix> data, GradTape<Scalar>* tape, std::size_t node)
      : shape_(std::move(shape)), data_(std::move(data)), tape_(tape), node_(node) {}

  Shape shape_;
  std::shared_ptr<const Matrix> data_;
  GradTape<Scalar>* tape_ = nullptr;
  std::size_t node_ = 0;
};

/// Trainable array. Gradients live outside the parameter (see
/// BasicGradients) so forward and backward passes never mutate a model.
template <typename Scalar>
struct BasicParameter {
  using Matrix = RowMatrix<Scalar>;

  BasicParameter() = default;
  explicit BasicParameter(Matrix v) : value(std::move(v)) {}

  Index size() const { return value.size(); }

  Matrix value;
};

/// d(loss)/d(parameter) for every parameter touched by one backward pass.
template <typename Scalar>
class BasicGradients {
 public:
  using Matrix = RowMatrix<Scalar>;

  /// Gradient for `p`; zeros when `p` did not participate in the loss.
  Matrix get(const BasicParameter<Scalar>& p) const {
    auto it = grads_.find(&p);
    if (it == grads_.end()) return Matrix::Zero(p.value.rows(), p.value.cols());
    return it->second;
  }

  const Matrix* find(const BasicParameter<Scalar>& p) const {
    auto it = grads_.find(&p);
    return it == grads_.end() ? nullptr : &it->second;
  }

  void add(const BasicParameter<Scalar>& p, const Matrix& g) {
    auto [it, inserted] = grads_.try_emplace(&p, g);
    if (!inserted) it->second += g;
  }

  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const BasicParameter<Scalar>*, Matrix> grads_;
};

/// Forward-pass context: owns the tape (when recording), the training flag
/// and the dropout generator. One graph per forward pass.
template <typename Scalar>
class BasicGraph {
 public:
  using Tensor = BasicTensor<Scalar>;
  using Parameter = BasicParameter<Scalar>;

  /// Inference context: nothing recorded, dropout off.
  BasicGraph() = default;

  static BasicGraph recording() {
    BasicGraph g;
    g.tape_ = std::make_unique<GradTape<Scalar>>();
    return g;
  }

  bool is_recording() const { return tape_ != nullptr; }
  GradTape<Scalar>* tape() { return tape_.get(); }

  /// Enables dropout driven by `rng`, which the caller owns.
  void enable_training(std::mt19937_64& rng) { rng_ = &rng; }
  bool training() const { return rng_ != nullptr; }
  std::mt19937_64& rng() {
    if (!rng_) throw ContractError("graph is not in training mode");
    return *rng_;
  }

  /// View of a parameter inside this pass; a leaf of the tape when recording.
  Tensor param(const Parameter& p) {
    auto it = cache_.find(&p);
    if (it != cache_.end()) return it->second;
    Tensor t(p.value);
    if (tape_) {
      t = t.track(*tape_);
      bound_.emplace_back(&p, t.node());
    }
    cache_.emplace(&p, t);
    return t;
  }

  /// Lifts a plain input onto the tape so its gradient can be read back.
  Tensor input(const Tensor& x) { return tape_ ? x.track(*tape_) : x; }

  /// Reverse sweep; returns d(loss)/d(param) for every parameter used in this pass.
  BasicGradients<Scalar> backward(const Tensor& loss) {
    if (!tape_ || !loss.tracked() || loss.tape() != tape_.get()) {
      throw ContractError("backward: loss was not recorded on this graph");
    }
    tape_->backward(loss.node());
    BasicGradients<Scalar> grads;
    for (const auto& [p, node] : bound_) grads.add(*p, tape_->gradient(node));
    return grads;
  }

  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gradient(const Tensor& x) const {
    if (!tape_ || x.tape() != tape_.get()) throw ContractError("gradient: tensor not recorded on this graph");
    return tape_->gradient(x.node());
  }

 private:
  std::unique_ptr<GradTape<Scalar>> tape_;
  std::mt19937_64* rng_ = nullptr;
  std::unordered_map<const Parameter*, Tensor> cache_;
  std::vector<std::pair<const Parameter*, std::size_t>> bound_;
};

}  // namespace lfit
