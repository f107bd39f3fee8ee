#include "convrec/autodiff.hpp"

#include <cmath>

namespace convrec {

Tape::Node& Tape::node(TensorRef t) {
  if (t.id < 0 || t.id >= size()) throw ContractError("bad tensor handle");
  return nodes_[static_cast<std::size_t>(t.id)];
}

const Tape::Node& Tape::node(TensorRef t) const {
  if (t.id < 0 || t.id >= size()) throw ContractError("bad tensor handle");
  return nodes_[static_cast<std::size_t>(t.id)];
}

TensorRef Tape::make(Eigen::MatrixXd value, bool requires_grad,
                     std::function<void()> pull) {
  if (ran_backward_) {
    throw ContractError("tape already ran backward; build a fresh tape");
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return {size() - 1};
}

TensorRef Tape::input(Eigen::MatrixXd value, bool requires_grad) {
  return make(std::move(value), requires_grad, nullptr);
}

Eigen::MatrixXd& Tape::grad_slot(TensorRef t) {
  Node& n = node(t);
  if (!n.grad_live) {
    n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    n.grad_live = true;
  }
  return n.grad;
}

const Eigen::MatrixXd& Tape::grad(TensorRef t) {
  return grad_slot(t);
}

TensorRef Tape::add(TensorRef a, TensorRef b) {
  const auto &va = value(a), &vb = value(b);
  if (va.rows() != vb.rows() || va.cols() != vb.cols()) {
    throw ContractError("add: shape mismatch");
  }
  TensorRef out{size()};
  return make(va + vb, needs(a) || needs(b), [this, a, b, out] {
    const Eigen::MatrixXd& g = node(out).grad;
    if (needs(a)) grad_slot(a) += g;
    if (needs(b)) grad_slot(b) += g;
  });
}

TensorRef Tape::sub(TensorRef a, TensorRef b) {
  const auto &va = value(a), &vb = value(b);
  if (va.rows() != vb.rows() || va.cols() != vb.cols()) {
    throw ContractError("sub: shape mismatch");
  }
  TensorRef out{size()};
  return make(va - vb, needs(a) || needs(b), [this, a, b, out] {
    const Eigen::MatrixXd& g = node(out).grad;
    if (needs(a)) grad_slot(a) += g;
    if (needs(b)) grad_slot(b) -= g;
  });
}

TensorRef Tape::cmul(TensorRef a, TensorRef b) {
  const auto &va = value(a), &vb = value(b);
  if (va.rows() != vb.rows() || va.cols() != vb.cols()) {
    throw ContractError("cmul: shape mismatch");
  }
  TensorRef out{size()};
  return make(va.cwiseProduct(vb), needs(a) || needs(b), [this, a, b, out] {
    const Eigen::MatrixXd& g = node(out).grad;
    if (needs(a)) grad_slot(a) += g.cwiseProduct(value(b));
    if (needs(b)) grad_slot(b) += g.cwiseProduct(value(a));
  });
}

TensorRef Tape::mm(TensorRef a, TensorRef b) {
  const auto &va = value(a), &vb = value(b);
  if (va.cols() != vb.rows()) throw ContractError("mm: shape mismatch");
  TensorRef out{size()};
  return make(va * vb, needs(a) || needs(b), [this, a, b, out] {
    const Eigen::MatrixXd& g = node(out).grad;
    if (needs(a)) grad_slot(a).noalias() += g * value(b).transpose();
    if (needs(b)) grad_slot(b).noalias() += value(a).transpose() * g;
  });
}

TensorRef Tape::mm_nt(TensorRef a, TensorRef b) {
  const auto &va = value(a), &vb = value(b);
  if (va.cols() != vb.cols()) throw ContractError("mm_nt: shape mismatch");
  TensorRef out{size()};
  return make(va * vb.transpose(), needs(a) || needs(b), [this, a, b, out] {
    const Eigen::MatrixXd& g = node(out).grad;
    if (needs(a)) grad_slot(a).noalias() += g * value(b);
    if (needs(b)) grad_slot(b).noalias() += g.transpose() * value(a);
  });
}

TensorRef Tape::mm_tn(TensorRef a, TensorRef b) {
  const auto &va = value(a), &vb = value(b);
  if (va.rows() != vb.rows()) throw ContractError("mm_tn: shape mismatch");
  TensorRef out{size()};
  return make(va.transpose() * vb, needs(a) || needs(b), [this, a, b, out] {
    const Eigen::MatrixXd& g = node(out).grad;
    if (needs(a)) grad_slot(a).noalias() += value(b) * g.transpose();
    if (needs(b)) grad_slot(b).noalias() += value(a) * g;
  });
}

TensorRef Tape::scale(TensorRef a, double s) {
  TensorRef out{size()};
  return make(value(a) * s, needs(a), [this, a, s, out] {
    if (needs(a)) grad_slot(a) += s * node(out).grad;
  });
}

TensorRef Tape::add_scalar(TensorRef a, double s) {
  TensorRef out{size()};
  return make(value(a).array() + s, needs(a), [this, a, out] {
    if (needs(a)) grad_slot(a) += node(out).grad;
  });
}

TensorRef Tape::add_rowvec(TensorRef a, TensorRef row) {
  const auto &va = value(a), &vr = value(row);
  if (vr.rows() != 1 || vr.cols() != va.cols()) {
    throw ContractError("add_rowvec: row must be 1 x cols(a)");
  }
  Eigen::MatrixXd v = va;
  v.rowwise() += vr.row(0);
  TensorRef out{size()};
  return make(std::move(v), needs(a) || needs(row), [this, a, row, out] {
    const Eigen::MatrixXd& g = node(out).grad;
    if (needs(a)) grad_slot(a) += g;
    if (needs(row)) grad_slot(row) += g.colwise().sum();
  });
}

TensorRef Tape::sub_bcast(TensorRef a, TensorRef scalar) {
  const auto& vs = value(scalar);
  if (vs.rows() != 1 || vs.cols() != 1) {
    throw ContractError("sub_bcast: scalar must be 1x1");
  }
  TensorRef out{size()};
  return make(value(a).array() - vs(0, 0), needs(a) || needs(scalar),
              [this, a, scalar, out] {
                const Eigen::MatrixXd& g = node(out).grad;
                if (needs(a)) grad_slot(a) += g;
                if (needs(scalar)) grad_slot(scalar)(0, 0) -= g.sum();
              });
}

TensorRef Tape::relu(TensorRef a) {
  TensorRef out{size()};
  return make(value(a).cwiseMax(0.0), needs(a), [this, a, out] {
    if (!needs(a)) return;
    grad_slot(a) += node(out).grad.cwiseProduct(
        (value(a).array() > 0.0).cast<double>().matrix());
  });
}

TensorRef Tape::leaky_relu(TensorRef a, double slope) {
  const auto& va = value(a);
  Eigen::MatrixXd v =
      (va.array() > 0.0).select(va, slope * va);
  TensorRef out{size()};
  return make(std::move(v), needs(a), [this, a, slope, out] {
    if (!needs(a)) return;
    const Eigen::MatrixXd& g = node(out).grad;
    Eigen::MatrixXd mask = (value(a).array() > 0.0)
                               .select(Eigen::MatrixXd::Ones(g.rows(), g.cols()),
                                       Eigen::MatrixXd::Constant(g.rows(), g.cols(), slope));
    grad_slot(a) += g.cwiseProduct(mask);
  });
}

TensorRef Tape::sigmoid(TensorRef a) {
  Eigen::MatrixXd v = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
  TensorRef out{size()};
  return make(std::move(v), needs(a), [this, a, out] {
    if (!needs(a)) return;
    const Eigen::MatrixXd& y = node(out).value;
    grad_slot(a) += node(out).grad.cwiseProduct(
        y.cwiseProduct((1.0 - y.array()).matrix()));
  });
}

TensorRef Tape::softmax_rows(TensorRef a) {
  const auto& va = value(a);
  Eigen::MatrixXd y(va.rows(), va.cols());
  for (Eigen::Index i = 0; i < va.rows(); ++i) {
    const double m = va.row(i).maxCoeff();
    Eigen::ArrayXd e = (va.row(i).array() - m).exp();
    y.row(i) = (e / e.sum()).matrix();
  }
  TensorRef out{size()};
  return make(std::move(y), needs(a), [this, a, out] {
    if (!needs(a)) return;
    const Eigen::MatrixXd& y = node(out).value;
    const Eigen::MatrixXd& g = node(out).grad;
    Eigen::MatrixXd& da = grad_slot(a);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double dot = g.row(i).dot(y.row(i));
      da.row(i) += y.row(i).cwiseProduct(
          (g.row(i).array() - dot).matrix());
    }
  });
}

TensorRef Tape::layer_norm_rows(TensorRef a, double eps) {
  const auto& va = value(a);
  Eigen::MatrixXd y(va.rows(), va.cols());
  Eigen::VectorXd stds(va.rows());
  for (Eigen::Index i = 0; i < va.rows(); ++i) {
    const double mu = va.row(i).mean();
    const double var = (va.row(i).array() - mu).square().mean();
    const double sd = std::sqrt(var + eps);
    stds(i) = sd;
    y.row(i) = ((va.row(i).array() - mu) / sd).matrix();
  }
  TensorRef out{size()};
  return make(std::move(y), needs(a), [this, a, out, stds] {
    if (!needs(a)) return;
    const Eigen::MatrixXd& y = node(out).value;
    const Eigen::MatrixXd& g = node(out).grad;
    Eigen::MatrixXd& da = grad_slot(a);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double m1 = g.row(i).mean();
      const double m2 = g.row(i).cwiseProduct(y.row(i)).mean();
      da.row(i) +=
          ((g.row(i).array() - m1 - y.row(i).array() * m2) / stds(i)).matrix();
    }
  });
}

TensorRef Tape::l2_normalize_rows(TensorRef a, double floor) {
  const auto& va = value(a);
  Eigen::MatrixXd y(va.rows(), va.cols());
  Eigen::VectorXd norms(va.rows());
  for (Eigen::Index i = 0; i < va.rows(); ++i) {
    const double n = va.row(i).norm();
    norms(i) = n;
    y.row(i) = va.row(i) / std::max(n, floor);
  }
  TensorRef out{size()};
  return make(std::move(y), needs(a), [this, a, out, norms, floor] {
    if (!needs(a)) return;
    const Eigen::MatrixXd& y = node(out).value;
    const Eigen::MatrixXd& g = node(out).grad;
    Eigen::MatrixXd& da = grad_slot(a);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      if (norms(i) > floor) {
        const double dot = y.row(i).dot(g.row(i));
        da.row(i) += (g.row(i) - dot * y.row(i)) / norms(i);
      } else {
        da.row(i) += g.row(i) / floor;
      }
    }
  });
}

TensorRef Tape::log_elem(TensorRef a) {
  const auto& va = value(a);
  if ((va.array() <= 0.0).any()) {
    throw ContractError("log_elem: non-positive entry");
  }
  TensorRef out{size()};
  return make(va.array().log().matrix(), needs(a), [this, a, out] {
    if (!needs(a)) return;
    grad_slot(a) +=
        node(out).grad.cwiseQuotient(value(a));
  });
}

TensorRef Tape::exp_elem(TensorRef a) {
  TensorRef out{size()};
  return make(value(a).array().exp().matrix(), needs(a), [this, a, out] {
    if (!needs(a)) return;
    grad_slot(a) += node(out).grad.cwiseProduct(node(out).value);
  });
}

TensorRef Tape::square(TensorRef a) {
  TensorRef out{size()};
  return make(value(a).array().square().matrix(), needs(a), [this, a, out] {
    if (!needs(a)) return;
    grad_slot(a) += 2.0 * node(out).grad.cwiseProduct(value(a));
  });
}

TensorRef Tape::rowsum(TensorRef a) {
  TensorRef out{size()};
  return make(value(a).rowwise().sum(), needs(a), [this, a, out] {
    if (!needs(a)) return;
    const Eigen::MatrixXd& g = node(out).grad;
    grad_slot(a) += g * Eigen::RowVectorXd::Ones(value(a).cols());
  });
}

TensorRef Tape::sum_all(TensorRef a) {
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = value(a).sum();
  TensorRef out{size()};
  return make(std::move(v), needs(a), [this, a, out] {
    if (!needs(a)) return;
    grad_slot(a).array() += node(out).grad(0, 0);
  });
}

TensorRef Tape::mean_all(TensorRef a) {
  const double n = static_cast<double>(value(a).size());
  if (n == 0.0) throw ContractError("mean_all: empty tensor");
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = value(a).mean();
  TensorRef out{size()};
  return make(std::move(v), needs(a), [this, a, out, n] {
    if (!needs(a)) return;
    grad_slot(a).array() += node(out).grad(0, 0) / n;
  });
}

TensorRef Tape::vcat(const std::vector<TensorRef>& parts) {
  if (parts.empty()) throw ContractError("vcat: no parts");
  Eigen::Index rows = 0;
  const Eigen::Index cols = value(parts[0]).cols();
  bool rg = false;
  for (TensorRef p : parts) {
    if (value(p).cols() != cols) throw ContractError("vcat: column mismatch");
    rows += value(p).rows();
    rg = rg || needs(p);
  }
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index at = 0;
  for (TensorRef p : parts) {
    v.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  TensorRef out{size()};
  return make(std::move(v), rg, [this, parts, out] {
    const Eigen::MatrixXd& g = node(out).grad;
    Eigen::Index at = 0;
    for (TensorRef p : parts) {
      const Eigen::Index r = value(p).rows();
      if (needs(p)) grad_slot(p) += g.middleRows(at, r);
      at += r;
    }
  });
}

TensorRef Tape::hcat(const std::vector<TensorRef>& parts) {
  if (parts.empty()) throw ContractError("hcat: no parts");
  Eigen::Index cols = 0;
  const Eigen::Index rows = value(parts[0]).rows();
  bool rg = false;
  for (TensorRef p : parts) {
    if (value(p).rows() != rows) throw ContractError("hcat: row mismatch");
    cols += value(p).cols();
    rg = rg || needs(p);
  }
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index at = 0;
  for (TensorRef p : parts) {
    v.middleCols(at, value(p).cols()) = value(p);
    at += value(p).cols();
  }
  TensorRef out{size()};
  return make(std::move(v), rg, [this, parts, out] {
    const Eigen::MatrixXd& g = node(out).grad;
    Eigen::Index at = 0;
    for (TensorRef p : parts) {
      const Eigen::Index c = value(p).cols();
      if (needs(p)) grad_slot(p) += g.middleCols(at, c);
      at += c;
    }
  });
}

TensorRef Tape::slice_rows(TensorRef a, int start, int count) {
  const auto& va = value(a);
  if (start < 0 || count < 0 || start + count > va.rows()) {
    throw ContractError("slice_rows: range out of bounds");
  }
  TensorRef out{size()};
  return make(va.middleRows(start, count), needs(a),
              [this, a, start, count, out] {
                if (!needs(a)) return;
                grad_slot(a).middleRows(start, count) += node(out).grad;
              });
}

TensorRef Tape::gather_rows(TensorRef a, std::vector<int> rows) {
  const auto& va = value(a);
  Eigen::MatrixXd v(static_cast<Eigen::Index>(rows.size()), va.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= va.rows()) {
      throw ContractError("gather_rows: index out of bounds");
    }
    v.row(static_cast<Eigen::Index>(i)) = va.row(rows[i]);
  }
  TensorRef out{size()};
  return make(std::move(v), needs(a), [this, a, rows, out] {
    if (!needs(a)) return;
    const Eigen::MatrixXd& g = node(out).grad;
    Eigen::MatrixXd& da = grad_slot(a);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      da.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    }
  });
}

void Tape::backward(TensorRef out) {
  const auto& v = value(out);
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("backward: output must be 1x1");
  }
  if (ran_backward_) throw ContractError("backward already ran");
  ran_backward_ = true;
  grad_slot(out)(0, 0) = 1.0;
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad_live && n.pull) n.pull();
  }
}

Eigen::MatrixXd& ParamStore::create(const std::string& name, int rows,
                                    int cols) {
  auto [it, fresh] =
      params_.emplace(name, Eigen::MatrixXd::Zero(rows, cols));
  if (!fresh) throw ContractError("parameter '" + name + "' already exists");
  return it->second;
}

Eigen::MatrixXd& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw ContractError("unknown parameter '" + name + "'");
  }
  return it->second;
}

const Eigen::MatrixXd& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw ContractError("unknown parameter '" + name + "'");
  }
  return it->second;
}

void Adam::step(ParamStore& params,
                const std::map<std::string, Eigen::MatrixXd>& grads) {
  ++t_;
  double clip_scale = 1.0;
  if (config_.max_grad_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) sq += g.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > config_.max_grad_norm) {
      clip_scale = config_.max_grad_norm / (norm + 1e-12);
    }
  }
  const double bc1 = 1.0 - std::pow(config_.beta1, t_);
  const double bc2 = 1.0 - std::pow(config_.beta2, t_);
  for (const auto& [name, g_raw] : grads) {
    Eigen::MatrixXd& p = params.at(name);
    if (p.rows() != g_raw.rows() || p.cols() != g_raw.cols()) {
      throw ContractError("gradient shape mismatch for '" + name + "'");
    }
    auto [it, fresh] = slots_.try_emplace(
        name, Eigen::MatrixXd::Zero(p.rows(), p.cols()),
        Eigen::MatrixXd::Zero(p.rows(), p.cols()));
    auto& [m, v] = it->second;
    const Eigen::MatrixXd g = clip_scale * g_raw;
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v +
        (1.0 - config_.beta2) * g.array().square().matrix();
    const Eigen::ArrayXXd mhat = m.array() / bc1;
    const Eigen::ArrayXXd vhat = v.array() / bc2;
    p.array() -= config_.lr * mhat / (vhat.sqrt() + config_.eps);
  }
}

}  // namespace convrec
