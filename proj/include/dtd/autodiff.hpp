#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dtd/tensor.hpp"

namespace dtd::ad {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Named trainable tensors with gradient accumulators and Adam state.
// Gradients accumulate across backward passes; callers zero between steps.
class ParamStore {
  public:
    Tensor& create(const std::string& name, Tensor init);
    bool has(const std::string& name) const;
    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    Tensor& grad(const std::string& name);
    const Tensor& grad(const std::string& name) const;

    void zero_grad();
    // Standard bias-corrected Adam over every parameter; rejects non-finite
    // gradients naming the offending parameter.
    void adam_step(const AdamConfig& cfg);
    void reset_optimizer();

    const std::vector<std::string>& names() const { return names_; }
    std::size_t count() const { return names_.size(); }
    std::size_t scalar_count() const;

  private:
    struct Entry {
        Tensor value;
        Tensor grad;
        Tensor m;
        Tensor v;
    };
    std::size_t index_of(const std::string& name) const;

    std::vector<std::string> names_;
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    long step_ = 0;

    friend class Tape;
};

using NodeId = std::int32_t;

enum class Op : std::uint8_t {
    Constant,
    Input,
    Param,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
    Exp,
    Log,
    Sqrt,
    Sum,
    Mean,
    SquaredL2,
    Concat,
    Slice,
    Transpose,
    Reshape,
};

const char* op_name(Op op);

// Define-by-run tape: each op evaluates eagerly and records itself, so the
// node list is always in topological order. backward() walks it in reverse,
// accumulating parameter gradients into the bound ParamStore.
class Tape {
  public:
    explicit Tape(ParamStore* params = nullptr);

    NodeId constant(Tensor v);
    NodeId input(Tensor v);
    NodeId param(const std::string& name);

    NodeId matmul(NodeId a, NodeId b);
    // Elementwise; the smaller operand may be a scalar, a broadcast row
    // (1 x C) or a broadcast column (R x 1).
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double c);
    NodeId relu(NodeId a);
    NodeId tanh(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId softmax(NodeId a);  // row-wise
    NodeId exp(NodeId a);
    NodeId log(NodeId a);
    NodeId sqrt(NodeId a);
    NodeId sum(NodeId a);
    NodeId mean(NodeId a);
    NodeId squared_l2(NodeId a);
    NodeId concat(NodeId a, NodeId b, int axis);
    NodeId concat(const std::vector<NodeId>& parts, int axis);
    NodeId slice(NodeId a, int axis, int start, int len);
    NodeId transpose(NodeId a);
    NodeId reshape(NodeId a, std::vector<int> shape);

    const Tensor& value(NodeId id) const;
    double scalar(NodeId id) const;

    // Root must be scalar for the seedless form.
    void backward(NodeId root);
    void backward(NodeId root, const Tensor& output_grad);

    // Gradient at any node from the last backward pass (zeros if untouched).
    Tensor grad(NodeId id) const;

    std::size_t node_count() const { return nodes_.size(); }
    ParamStore* params() { return params_; }

  private:
    struct Node {
        Op op;
        NodeId a = -1;
        NodeId b = -1;
        int axis = 0;
        int start = 0;
        int len = 0;
        double c = 0.0;
        std::int32_t param_index = -1;
        bool needs_grad = false;
        Tensor value;
        Tensor grad;
        bool grad_live = false;
    };

    NodeId push(Node n);
    Node& node(NodeId id);
    const Node& node(NodeId id) const;
    void check_id(NodeId id) const;
    void accumulate(NodeId id, const Tensor& g);
    [[noreturn]] void fail(Op op, const std::string& msg, NodeId a, NodeId b = -1) const;

    std::vector<Node> nodes_;
    ParamStore* params_;
    std::unordered_map<std::string, NodeId> param_nodes_;
    bool ran_backward_ = false;
};

}  // namespace dtd::ad
