#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "convrec/error.hpp"

namespace convrec {

/// Handle to a tensor on a Tape.
struct TensorRef {
  int id = -1;
};

/// Reverse-mode differentiation tape over dense matrices. Build a forward
/// expression with the ops below, call backward() on a 1x1 result, then read
/// gradients of the inputs. One tape per forward pass; not reusable.
class Tape {
 public:
  /// Leaf tensor. requires_grad=false marks data the backward pass skips.
  TensorRef input(Eigen::MatrixXd value, bool requires_grad = true);
  TensorRef constant(Eigen::MatrixXd value) { return input(std::move(value), false); }

  const Eigen::MatrixXd& value(TensorRef t) const { return node(t).value; }
  /// Gradient accumulated by backward(); zero matrix if untouched.
  const Eigen::MatrixXd& grad(TensorRef t);

  TensorRef add(TensorRef a, TensorRef b);
  TensorRef sub(TensorRef a, TensorRef b);
  TensorRef cmul(TensorRef a, TensorRef b);
  TensorRef mm(TensorRef a, TensorRef b);     // A * B
  TensorRef mm_nt(TensorRef a, TensorRef b);  // A * B^T
  TensorRef mm_tn(TensorRef a, TensorRef b);  // A^T * B
  TensorRef scale(TensorRef a, double s);
  TensorRef add_scalar(TensorRef a, double s);
  /// Broadcast-add a 1xC row to every row of a.
  TensorRef add_rowvec(TensorRef a, TensorRef row);
  /// Broadcast-subtract a 1x1 scalar tensor from every entry of a.
  TensorRef sub_bcast(TensorRef a, TensorRef scalar);
  TensorRef relu(TensorRef a);
  TensorRef leaky_relu(TensorRef a, double slope);
  TensorRef sigmoid(TensorRef a);
  TensorRef softmax_rows(TensorRef a);
  TensorRef layer_norm_rows(TensorRef a, double eps = 1e-5);
  /// Rows scaled to unit length; rows shorter than floor divide by floor.
  TensorRef l2_normalize_rows(TensorRef a, double floor = 1e-12);
  TensorRef log_elem(TensorRef a);
  TensorRef exp_elem(TensorRef a);
  TensorRef square(TensorRef a);
  TensorRef rowsum(TensorRef a);   // RxC -> Rx1
  TensorRef sum_all(TensorRef a);  // -> 1x1
  TensorRef mean_all(TensorRef a); // -> 1x1
  TensorRef vcat(const std::vector<TensorRef>& parts);
  TensorRef hcat(const std::vector<TensorRef>& parts);
  TensorRef slice_rows(TensorRef a, int start, int count);
  /// Rows picked by index, duplicates allowed; backward scatter-adds.
  TensorRef gather_rows(TensorRef a, std::vector<int> rows);

  /// Seeds d(out)/d(out) = 1 on a 1x1 tensor and propagates.
  void backward(TensorRef out);

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    bool requires_grad = false;
    bool grad_live = false;
    std::function<void()> pull;
  };

  Node& node(TensorRef t);
  const Node& node(TensorRef t) const;
  TensorRef make(Eigen::MatrixXd value, bool requires_grad,
                 std::function<void()> pull);
  Eigen::MatrixXd& grad_slot(TensorRef t);
  bool needs(TensorRef t) const { return node(t).requires_grad; }

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

/// Named parameter matrices with deterministic iteration order.
class ParamStore {
 public:
  Eigen::MatrixXd& create(const std::string& name, int rows, int cols);
  Eigen::MatrixXd& at(const std::string& name);
  const Eigen::MatrixXd& at(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) != 0; }
  std::map<std::string, Eigen::MatrixXd>& all() { return params_; }
  const std::map<std::string, Eigen::MatrixXd>& all() const { return params_; }

 private:
  std::map<std::string, Eigen::MatrixXd> params_;
};

/// Lazily registers ParamStore tensors on a tape, each at most once, and
/// remembers the order so callers can harvest gradients by name.
class TapeBindings {
 public:
  TapeBindings(Tape& tape, const ParamStore& store)
      : tape_(&tape), store_(&store) {}

  Tape& tape() { return *tape_; }
  const ParamStore& store() const { return *store_; }

  TensorRef get(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const TensorRef ref = tape_->input(store_->at(name));
    bound_.emplace(name, ref);
    order_.emplace_back(name, ref);
    return ref;
  }

  const std::vector<std::pair<std::string, TensorRef>>& order() const {
    return order_;
  }

 private:
  Tape* tape_;
  const ParamStore* store_;
  std::map<std::string, TensorRef> bound_;
  std::vector<std::pair<std::string, TensorRef>> order_;
};

/// Adam over named gradients. Slots are created on first sight of a name.
class Adam {
 public:
  struct Config {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Global-norm gradient clip; 0 disables.
    double max_grad_norm = 0.0;
  };

  explicit Adam(Config config) : config_(config) {}

  void step(ParamStore& params,
            const std::map<std::string, Eigen::MatrixXd>& grads);

  int steps_taken() const { return t_; }
  const Config& config() const { return config_; }

  /// Serialization hooks for checkpoints.
  std::map<std::string, std::pair<Eigen::MatrixXd, Eigen::MatrixXd>>&
  slots() { return slots_; }
  const std::map<std::string, std::pair<Eigen::MatrixXd, Eigen::MatrixXd>>&
  slots() const { return slots_; }
  void set_steps(int t) { t_ = t; }

 private:
  Config config_;
  int t_ = 0;
  std::map<std::string, std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> slots_;
};

}  // namespace convrec
