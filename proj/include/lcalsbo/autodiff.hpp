#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "lcalsbo/rng.hpp"
#include "lcalsbo/tensor.hpp"

/// Reverse-mode automatic differentiation over dense 2-D tensors.
///
/// A Graph is a tape: nodes are appended in construction order, which is
/// also a valid topological order. Nodes whose inputs are bound are
/// evaluated on construction; `forward` re-evaluates the whole tape with new
/// bindings for named input and parameter nodes.
namespace lcalsbo::ad {

using ParameterSet = std::map<std::string, Tensor>;
using NamedTensors = std::map<std::string, Tensor>;

enum class Op {
  Input,
  Parameter,
  Constant,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  Tanh,
  Sigmoid,
  Relu,
  Exp,
  Log,
  Square,
  Softplus,
  Sum,
  Mean,
  Concat,
  Slice,
};

const char* op_name(Op op);

struct NodeId {
  std::size_t index = 0;
  bool operator==(const NodeId&) const = default;
};

class Gradients {
 public:
  Gradients(std::vector<Tensor> adjoints, NamedTensors parameters)
      : adjoints_(std::move(adjoints)), parameters_(std::move(parameters)) {}

  /// Adjoint of the loss with respect to any node (zeros if unreachable).
  const Tensor& wrt(NodeId node) const { return adjoints_.at(node.index); }
  /// Gradient per named parameter node. Parameters used by several nodes
  /// under the same name have their adjoints summed.
  const NamedTensors& parameters() const { return parameters_; }

 private:
  std::vector<Tensor> adjoints_;
  NamedTensors parameters_;
};

class Graph {
 public:
  /// Unbound placeholder; must be supplied to `forward`.
  NodeId input(std::string name);
  NodeId input(std::string name, Tensor value);
  NodeId parameter(std::string name, Tensor value);
  NodeId constant(Tensor value);

  NodeId matmul(NodeId a, NodeId b);
  /// Elementwise; `b` may also be a 1 x cols row or a 1 x 1 scalar.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId relu(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId square(NodeId a);
  NodeId softplus(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  /// Column-wise concatenation.
  NodeId concat(NodeId a, NodeId b);
  /// Columns [begin, end).
  NodeId slice(NodeId a, std::size_t begin, std::size_t end);

  /// Rebinds the named input/parameter nodes and re-evaluates the tape.
  void forward(const NamedTensors& bindings);
  Gradients backward(NodeId loss) const;

  const Tensor& value(NodeId node) const;
  bool evaluated(NodeId node) const { return nodes_.at(node.index).evaluated; }
  std::size_t size() const { return nodes_.size(); }
  Op op(NodeId node) const { return nodes_.at(node.index).op; }

 private:
  struct Node {
    Op op;
    std::vector<std::size_t> parents;
    std::string name;
    double scalar = 0.0;
    std::size_t begin = 0;
    std::size_t end = 0;
    Tensor value;
    bool evaluated = false;
  };

  NodeId push(Node node);
  void evaluate(Node& node);
  const Tensor& parent_value(const Node& node, std::size_t k) const {
    return nodes_[node.parents[k]].value;
  }

  std::vector<Node> nodes_;
};

inline void forward(Graph& graph, const NamedTensors& bindings) { graph.forward(bindings); }
inline Gradients backward(const Graph& graph, NodeId loss) { return graph.backward(loss); }

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  NamedTensors first_moment;
  NamedTensors second_moment;
};

/// One Adam update. Parameters without a gradient entry are left untouched.
void adam_step(ParameterSet& params, const NamedTensors& grads, AdamState& state);

/// Glorot-uniform weight in x out.
Tensor glorot_uniform(std::size_t in, std::size_t out, Rng& rng);

/// Dense MLP parameters "<prefix>.w<i>" / "<prefix>.b<i>" for consecutive widths.
void init_mlp(ParameterSet& params, const std::string& prefix,
              const std::vector<std::size_t>& widths, Rng& rng);

enum class Activation { Tanh, Relu };

/// Builds a dense stack on the graph; hidden layers use `act`, the last is linear.
NodeId mlp(Graph& graph, const ParameterSet& params, const std::string& prefix,
           std::size_t layers, NodeId x, Activation act = Activation::Tanh);

/// Same arithmetic as `mlp`, without recording a tape.
Tensor mlp_forward(const ParameterSet& params, const std::string& prefix, std::size_t layers,
                   const Tensor& x, Activation act = Activation::Tanh);

/// Text container with hexfloat values; round trip is bit-exact.
///
///   lcalsbo-params 1
///   count <n>
///   tensor <name> <rows> <cols>
///   <rows lines of space-separated %a values>
void save_parameters(std::ostream& out, const ParameterSet& params);
ParameterSet load_parameters(std::istream& in);

std::uint64_t parameter_hash(const ParameterSet& params);

}  // namespace lcalsbo::ad
