#include "lcalsbo/autodiff.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>

namespace lcalsbo::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Parameter: return "parameter";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Relu: return "relu";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Square: return "square";
    case Op::Softplus: return "softplus";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
  }
  return "?";
}

namespace {

enum class Broadcast { Same, Row, Scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* what) {
  if (a.same_shape(b)) return Broadcast::Same;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::Scalar;
  throw ShapeError(std::string(what) + " " + a.shape_string() + " with " + b.shape_string());
}

double broadcast_at(const Tensor& b, Broadcast kind, std::size_t i, std::size_t j) {
  switch (kind) {
    case Broadcast::Same: return b(i, j);
    case Broadcast::Row: return b(0, j);
    case Broadcast::Scalar: return b(0, 0);
  }
  return 0.0;
}

template <typename F>
Tensor binary(const Tensor& a, const Tensor& b, const char* what, F f) {
  const Broadcast kind = broadcast_kind(a, b, what);
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      out(i, j) = f(a(i, j), broadcast_at(b, kind, i, j));
    }
  }
  return out;
}

template <typename F>
Tensor unary(const Tensor& a, F f) {
  Tensor out = a;
  for (double& v : out.values()) v = f(v);
  return out;
}

// Sums `grad` (shaped like the broadcast result) down to the shape of `b`.
Tensor reduce_to(const Tensor& grad, const Tensor& b) {
  if (grad.same_shape(b)) return grad;
  Tensor out(b.rows(), b.cols());
  for (std::size_t i = 0; i < grad.rows(); ++i) {
    for (std::size_t j = 0; j < grad.cols(); ++j) {
      if (b.cols() == 1 && b.rows() == 1) {
        out(0, 0) += grad(i, j);
      } else {
        out(0, j) += grad(i, j);
      }
    }
  }
  return out;
}

void accumulate(Tensor& target, const Tensor& delta) {
  if (target.empty()) {
    target = delta;
    return;
  }
  for (std::size_t k = 0; k < target.size(); ++k) target.values()[k] += delta.values()[k];
}

}  // namespace

NodeId Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  Node& n = nodes_.back();
  bool ready = true;
  for (std::size_t p : n.parents) ready = ready && nodes_[p].evaluated;
  if (ready && n.op != Op::Input) evaluate(n);
  return NodeId{nodes_.size() - 1};
}

NodeId Graph::input(std::string name) {
  Node n{Op::Input, {}, std::move(name)};
  return push(std::move(n));
}

NodeId Graph::input(std::string name, Tensor value) {
  Node n{Op::Input, {}, std::move(name)};
  n.value = std::move(value);
  n.evaluated = true;
  return push(std::move(n));
}

NodeId Graph::parameter(std::string name, Tensor value) {
  Node n{Op::Parameter, {}, std::move(name)};
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::constant(Tensor value) {
  Node n{Op::Constant, {}, {}};
  n.value = std::move(value);
  return push(std::move(n));
}

#define LCALSBO_UNARY(fn, opcode)              \
  NodeId Graph::fn(NodeId a) {                 \
    return push(Node{opcode, {a.index}, {}});  \
  }

LCALSBO_UNARY(tanh, Op::Tanh)
LCALSBO_UNARY(sigmoid, Op::Sigmoid)
LCALSBO_UNARY(relu, Op::Relu)
LCALSBO_UNARY(exp, Op::Exp)
LCALSBO_UNARY(log, Op::Log)
LCALSBO_UNARY(square, Op::Square)
LCALSBO_UNARY(softplus, Op::Softplus)
LCALSBO_UNARY(sum, Op::Sum)
LCALSBO_UNARY(mean, Op::Mean)
#undef LCALSBO_UNARY

NodeId Graph::matmul(NodeId a, NodeId b) { return push(Node{Op::MatMul, {a.index, b.index}, {}}); }
NodeId Graph::add(NodeId a, NodeId b) { return push(Node{Op::Add, {a.index, b.index}, {}}); }
NodeId Graph::sub(NodeId a, NodeId b) { return push(Node{Op::Sub, {a.index, b.index}, {}}); }
NodeId Graph::mul(NodeId a, NodeId b) { return push(Node{Op::Mul, {a.index, b.index}, {}}); }
NodeId Graph::concat(NodeId a, NodeId b) { return push(Node{Op::Concat, {a.index, b.index}, {}}); }

NodeId Graph::scale(NodeId a, double factor) {
  Node n{Op::Scale, {a.index}, {}};
  n.scalar = factor;
  return push(std::move(n));
}

NodeId Graph::slice(NodeId a, std::size_t begin, std::size_t end) {
  Node n{Op::Slice, {a.index}, {}};
  n.begin = begin;
  n.end = end;
  return push(std::move(n));
}

void Graph::evaluate(Node& node) {
  switch (node.op) {
    case Op::Input:
    case Op::Parameter:
    case Op::Constant:
      break;
    case Op::MatMul:
      node.value = kernels::matmul(parent_value(node, 0), parent_value(node, 1));
      break;
    case Op::Add: {
      const Tensor& b = parent_value(node, 1);
      if (b.rows() == 1 && b.cols() == parent_value(node, 0).cols() &&
          parent_value(node, 0).rows() != 1) {
        // shares arithmetic with the non-taped kernels
        node.value = parent_value(node, 0);
        kernels::add_row_bias(node.value, b);
      } else {
        node.value = binary(parent_value(node, 0), b, "add",
                            [](double x, double y) { return x + y; });
      }
      break;
    }
    case Op::Sub:
      node.value = binary(parent_value(node, 0), parent_value(node, 1), "sub",
                          [](double x, double y) { return x - y; });
      break;
    case Op::Mul:
      node.value = binary(parent_value(node, 0), parent_value(node, 1), "mul",
                          [](double x, double y) { return x * y; });
      break;
    case Op::Scale: {
      const double f = node.scalar;
      node.value = unary(parent_value(node, 0), [f](double v) { return f * v; });
      break;
    }
    case Op::Tanh:
      node.value = parent_value(node, 0);
      kernels::apply_tanh(node.value);
      break;
    case Op::Sigmoid:
      node.value = parent_value(node, 0);
      kernels::apply_sigmoid(node.value);
      break;
    case Op::Relu:
      node.value = unary(parent_value(node, 0), [](double v) { return v > 0.0 ? v : 0.0; });
      break;
    case Op::Exp:
      node.value = unary(parent_value(node, 0), [](double v) { return std::exp(v); });
      break;
    case Op::Log:
      node.value = unary(parent_value(node, 0), [](double v) { return std::log(v); });
      break;
    case Op::Square:
      node.value = unary(parent_value(node, 0), [](double v) { return v * v; });
      break;
    case Op::Softplus:
      node.value = unary(parent_value(node, 0), kernels::softplus);
      break;
    case Op::Sum: {
      double s = 0.0;
      for (double v : parent_value(node, 0).values()) s += v;
      node.value = Tensor::scalar(s);
      break;
    }
    case Op::Mean: {
      const Tensor& a = parent_value(node, 0);
      if (a.empty()) throw ShapeError("mean of empty tensor");
      double s = 0.0;
      for (double v : a.values()) s += v;
      node.value = Tensor::scalar(s / static_cast<double>(a.size()));
      break;
    }
    case Op::Concat: {
      const Tensor& a = parent_value(node, 0);
      const Tensor& b = parent_value(node, 1);
      if (a.rows() != b.rows()) {
        throw ShapeError("concat " + a.shape_string() + " with " + b.shape_string());
      }
      Tensor out(a.rows(), a.cols() + b.cols());
      for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
        for (std::size_t j = 0; j < b.cols(); ++j) out(i, a.cols() + j) = b(i, j);
      }
      node.value = std::move(out);
      break;
    }
    case Op::Slice: {
      const Tensor& a = parent_value(node, 0);
      if (node.begin >= node.end || node.end > a.cols()) {
        throw ShapeError("slice [" + std::to_string(node.begin) + ", " +
                         std::to_string(node.end) + ") of " + a.shape_string());
      }
      Tensor out(a.rows(), node.end - node.begin);
      for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = node.begin; j < node.end; ++j) out(i, j - node.begin) = a(i, j);
      }
      node.value = std::move(out);
      break;
    }
  }
  if (!node.value.all_finite()) {
    throw NonFiniteError(std::string("non-finite value produced by ") + op_name(node.op) +
                         (node.name.empty() ? "" : " '" + node.name + "'"));
  }
  node.evaluated = true;
}

void Graph::forward(const NamedTensors& bindings) {
  for (Node& n : nodes_) {
    if (n.op == Op::Input || n.op == Op::Parameter) {
      auto it = bindings.find(n.name);
      if (it != bindings.end()) {
        if (n.op == Op::Parameter && !n.value.same_shape(it->second)) {
          throw ShapeError("parameter '" + n.name + "' rebound from " + n.value.shape_string() +
                           " to " + it->second.shape_string());
        }
        n.value = it->second;
        n.evaluated = true;
      } else if (!n.evaluated) {
        throw std::invalid_argument("input '" + n.name + "' is not bound");
      }
      if (!n.value.all_finite()) {
        throw NonFiniteError("non-finite value bound to '" + n.name + "'");
      }
    } else if (n.op != Op::Constant) {
      evaluate(n);
    }
  }
}

const Tensor& Graph::value(NodeId node) const {
  const Node& n = nodes_.at(node.index);
  if (!n.evaluated) throw std::logic_error("node has not been evaluated; run forward first");
  return n.value;
}

Gradients Graph::backward(NodeId loss) const {
  const Node& root = nodes_.at(loss.index);
  if (!root.evaluated) throw std::logic_error("backward before forward");
  if (root.value.size() != 1) throw ShapeError("loss must be scalar, got " + root.value.shape_string());

  std::vector<Tensor> adj(nodes_.size());
  adj[loss.index] = Tensor::scalar(1.0);

  for (std::size_t k = loss.index + 1; k-- > 0;) {
    const Node& n = nodes_[k];
    if (adj[k].empty() || n.parents.empty()) continue;
    if (!n.evaluated) throw std::logic_error("backward through unevaluated node");
    const Tensor& g = adj[k];
    const Tensor& y = n.value;
    auto parent = [&](std::size_t i) -> const Tensor& { return nodes_[n.parents[i]].value; };
    auto push_grad = [&](std::size_t i, const Tensor& delta) { accumulate(adj[n.parents[i]], delta); };

    switch (n.op) {
      case Op::Input:
      case Op::Parameter:
      case Op::Constant:
        break;
      case Op::MatMul:
        push_grad(0, kernels::matmul_nt(g, parent(1)));
        push_grad(1, kernels::matmul_tn(parent(0), g));
        break;
      case Op::Add:
        push_grad(0, g);
        push_grad(1, reduce_to(g, parent(1)));
        break;
      case Op::Sub: {
        push_grad(0, g);
        Tensor neg = unary(g, [](double v) { return -v; });
        push_grad(1, reduce_to(neg, parent(1)));
        break;
      }
      case Op::Mul: {
        const Tensor& a = parent(0);
        const Tensor& b = parent(1);
        const Broadcast kind = broadcast_kind(a, b, "mul");
        Tensor da(a.rows(), a.cols()), db_full(a.rows(), a.cols());
        for (std::size_t i = 0; i < a.rows(); ++i) {
          for (std::size_t j = 0; j < a.cols(); ++j) {
            da(i, j) = g(i, j) * broadcast_at(b, kind, i, j);
            db_full(i, j) = g(i, j) * a(i, j);
          }
        }
        push_grad(0, da);
        push_grad(1, reduce_to(db_full, b));
        break;
      }
      case Op::Scale: {
        const double f = n.scalar;
        push_grad(0, unary(g, [f](double v) { return f * v; }));
        break;
      }
      case Op::Tanh: {
        Tensor d = g;
        for (std::size_t i = 0; i < d.size(); ++i) d.values()[i] *= 1.0 - y.values()[i] * y.values()[i];
        push_grad(0, d);
        break;
      }
      case Op::Sigmoid: {
        Tensor d = g;
        for (std::size_t i = 0; i < d.size(); ++i) {
          const double s = y.values()[i];
          d.values()[i] *= s * (1.0 - s);
        }
        push_grad(0, d);
        break;
      }
      case Op::Relu: {
        Tensor d = g;
        const Tensor& x = parent(0);
        for (std::size_t i = 0; i < d.size(); ++i) {
          if (!(x.values()[i] > 0.0)) d.values()[i] = 0.0;
        }
        push_grad(0, d);
        break;
      }
      case Op::Exp: {
        Tensor d = g;
        for (std::size_t i = 0; i < d.size(); ++i) d.values()[i] *= y.values()[i];
        push_grad(0, d);
        break;
      }
      case Op::Log: {
        Tensor d = g;
        const Tensor& x = parent(0);
        for (std::size_t i = 0; i < d.size(); ++i) d.values()[i] /= x.values()[i];
        push_grad(0, d);
        break;
      }
      case Op::Square: {
        Tensor d = g;
        const Tensor& x = parent(0);
        for (std::size_t i = 0; i < d.size(); ++i) d.values()[i] *= 2.0 * x.values()[i];
        push_grad(0, d);
        break;
      }
      case Op::Softplus: {
        Tensor d = g;
        const Tensor& x = parent(0);
        for (std::size_t i = 0; i < d.size(); ++i) d.values()[i] *= kernels::sigmoid(x.values()[i]);
        push_grad(0, d);
        break;
      }
      case Op::Sum: {
        const Tensor& x = parent(0);
        push_grad(0, Tensor(x.rows(), x.cols(), g.item()));
        break;
      }
      case Op::Mean: {
        const Tensor& x = parent(0);
        push_grad(0, Tensor(x.rows(), x.cols(), g.item() / static_cast<double>(x.size())));
        break;
      }
      case Op::Concat: {
        const Tensor& a = parent(0);
        const Tensor& b = parent(1);
        Tensor da(a.rows(), a.cols()), db(b.rows(), b.cols());
        for (std::size_t i = 0; i < a.rows(); ++i) {
          for (std::size_t j = 0; j < a.cols(); ++j) da(i, j) = g(i, j);
          for (std::size_t j = 0; j < b.cols(); ++j) db(i, j) = g(i, a.cols() + j);
        }
        push_grad(0, da);
        push_grad(1, db);
        break;
      }
      case Op::Slice: {
        const Tensor& a = parent(0);
        Tensor da(a.rows(), a.cols());
        for (std::size_t i = 0; i < a.rows(); ++i) {
          for (std::size_t j = n.begin; j < n.end; ++j) da(i, j) = g(i, j - n.begin);
        }
        push_grad(0, da);
        break;
      }
    }
  }

  NamedTensors params;
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    const Node& n = nodes_[k];
    if (n.op != Op::Parameter) continue;
    const Tensor grad = adj[k].empty() ? Tensor(n.value.rows(), n.value.cols()) : adj[k];
    auto it = params.find(n.name);
    if (it == params.end()) {
      params.emplace(n.name, grad);
    } else {
      accumulate(it->second, grad);
    }
  }
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    if (adj[k].empty()) adj[k] = Tensor(nodes_[k].value.rows(), nodes_[k].value.cols());
  }
  return Gradients(std::move(adj), std::move(params));
}

void adam_step(ParameterSet& params, const NamedTensors& grads, AdamState& state) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("gradient for unknown parameter '" + name + "'");
    if (!it->second.same_shape(g)) {
      throw ShapeError("gradient shape " + g.shape_string() + " for parameter '" + name + "' " +
                       it->second.shape_string());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    auto [m_it, m_new] = state.first_moment.try_emplace(name, p.rows(), p.cols());
    auto [v_it, v_new] = state.second_moment.try_emplace(name, p.rows(), p.cols());
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    if (!m.same_shape(g) || !v.same_shape(g)) {
      throw ShapeError("Adam moment shape mismatch for '" + name + "'");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.values()[i];
      m.values()[i] = state.beta1 * m.values()[i] + (1.0 - state.beta1) * gi;
      v.values()[i] = state.beta2 * v.values()[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m.values()[i] / c1;
      const double vhat = v.values()[i] / c2;
      p.values()[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

Tensor glorot_uniform(std::size_t in, std::size_t out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor w(in, out);
  for (double& v : w.values()) v = dist(rng);
  return w;
}

void init_mlp(ParameterSet& params, const std::string& prefix,
              const std::vector<std::size_t>& widths, Rng& rng) {
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    params[prefix + ".w" + std::to_string(i)] = glorot_uniform(widths[i], widths[i + 1], rng);
    params[prefix + ".b" + std::to_string(i)] = Tensor(1, widths[i + 1]);
  }
}

NodeId mlp(Graph& graph, const ParameterSet& params, const std::string& prefix,
           std::size_t layers, NodeId x, Activation act) {
  NodeId h = x;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string w = prefix + ".w" + std::to_string(i);
    const std::string b = prefix + ".b" + std::to_string(i);
    h = graph.add(graph.matmul(h, graph.parameter(w, params.at(w))), graph.parameter(b, params.at(b)));
    if (i + 1 < layers) h = act == Activation::Tanh ? graph.tanh(h) : graph.relu(h);
  }
  return h;
}

Tensor mlp_forward(const ParameterSet& params, const std::string& prefix, std::size_t layers,
                   const Tensor& x, Activation act) {
  Tensor h = x;
  for (std::size_t i = 0; i < layers; ++i) {
    const Tensor& w = params.at(prefix + ".w" + std::to_string(i));
    const Tensor& b = params.at(prefix + ".b" + std::to_string(i));
    Tensor next = kernels::matmul(h, w);
    if (next.rows() == 1) {
      for (std::size_t j = 0; j < next.cols(); ++j) next(0, j) = next(0, j) + b(0, j);
    } else {
      kernels::add_row_bias(next, b);
    }
    if (i + 1 < layers) {
      if (act == Activation::Tanh) {
        kernels::apply_tanh(next);
      } else {
        for (double& v : next.values()) v = v > 0.0 ? v : 0.0;
      }
    }
    h = std::move(next);
  }
  if (!h.all_finite()) throw NonFiniteError("non-finite network output in '" + prefix + "'");
  return h;
}

void save_parameters(std::ostream& out, const ParameterSet& params) {
  out << "lcalsbo-params 1\n";
  out << "count " << params.size() << "\n";
  char buf[64];
  for (const auto& [name, t] : params) {
    if (name.find_first_of(" \t\n") != std::string::npos) {
      throw std::invalid_argument("parameter name contains whitespace: '" + name + "'");
    }
    out << "tensor " << name << " " << t.rows() << " " << t.cols() << "\n";
    for (std::size_t i = 0; i < t.rows(); ++i) {
      for (std::size_t j = 0; j < t.cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%a", t(i, j));
        out << (j ? " " : "") << buf;
      }
      out << "\n";
    }
  }
}

ParameterSet load_parameters(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "lcalsbo-params" || version != 1) {
    throw std::runtime_error("not an lcalsbo parameter container");
  }
  std::string key;
  std::size_t count = 0;
  if (!(in >> key >> count) || key != "count") throw std::runtime_error("parameter container: missing count");
  ParameterSet params;
  for (std::size_t k = 0; k < count; ++k) {
    std::string tag, name;
    std::size_t rows = 0, cols = 0;
    if (!(in >> tag >> name >> rows >> cols) || tag != "tensor") {
      throw std::runtime_error("parameter container: bad tensor header at entry " + std::to_string(k));
    }
    Tensor t(rows, cols);
    for (double& v : t.values()) {
      std::string token;
      if (!(in >> token)) throw std::runtime_error("parameter container: truncated tensor '" + name + "'");
      char* end = nullptr;
      v = std::strtod(token.c_str(), &end);
      if (end == token.c_str() || *end != '\0') {
        throw std::runtime_error("parameter container: bad value '" + token + "'");
      }
    }
    params.emplace(std::move(name), std::move(t));
  }
  return params;
}

std::uint64_t parameter_hash(const ParameterSet& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : params) {
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(t.data(), t.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace lcalsbo::ad
