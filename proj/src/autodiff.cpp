#include "dtd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dtd/kernels.hpp"

namespace dtd::ad {

namespace {

// Broadcast relation of the smaller operand against the larger one's
// matrix view.
enum class Bcast { Same, Scalar, Row, Col };

bool classify_bcast(const Tensor& big, const Tensor& small, Bcast& out) {
    if (big.same_shape(small)) {
        out = Bcast::Same;
        return true;
    }
    if (small.size() == 1) {
        out = Bcast::Scalar;
        return true;
    }
    if (small.rows() == 1 && small.cols() == big.cols()) {
        out = Bcast::Row;
        return true;
    }
    if (small.cols() == 1 && small.rows() == big.rows()) {
        out = Bcast::Col;
        return true;
    }
    return false;
}

inline std::size_t bcast_index(Bcast b, int r, int c, int cols) {
    switch (b) {
        case Bcast::Same: return static_cast<std::size_t>(r) * cols + c;
        case Bcast::Scalar: return 0;
        case Bcast::Row: return static_cast<std::size_t>(c);
        case Bcast::Col: return static_cast<std::size_t>(r);
    }
    return 0;
}

// Reduce a full-shaped gradient back onto the smaller operand's shape.
Tensor reduce_bcast(const Tensor& g, const Tensor& small, Bcast b) {
    if (b == Bcast::Same) return g;
    Tensor out(small.shape());
    const int rows = g.rows();
    const int cols = g.cols();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            out[bcast_index(b, r, c, cols)] += g[static_cast<std::size_t>(r) * cols + c];
        }
    }
    return out;
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Constant: return "constant";
        case Op::Input: return "input";
        case Op::Param: return "param";
        case Op::MatMul: return "matmul";
        case Op::Add: return "add";
        case Op::Sub: return "subtract";
        case Op::Mul: return "multiply";
        case Op::Scale: return "scale";
        case Op::Relu: return "relu";
        case Op::Tanh: return "tanh";
        case Op::Sigmoid: return "sigmoid";
        case Op::Softmax: return "softmax";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sqrt: return "sqrt";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::SquaredL2: return "squared-l2";
        case Op::Concat: return "concat";
        case Op::Slice: return "slice";
        case Op::Transpose: return "transpose";
        case Op::Reshape: return "reshape";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// ParamStore

Tensor& ParamStore::create(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::invalid_argument("parameter already exists: " + name);
    Entry e;
    e.grad = Tensor::zeros(init.shape());
    e.m = Tensor::zeros(init.shape());
    e.v = Tensor::zeros(init.shape());
    e.value = std::move(init);
    index_[name] = entries_.size();
    names_.push_back(name);
    entries_.push_back(std::move(e));
    return entries_.back().value;
}

std::size_t ParamStore::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) != 0; }

Tensor& ParamStore::value(const std::string& name) { return entries_[index_of(name)].value; }
const Tensor& ParamStore::value(const std::string& name) const {
    return entries_[index_of(name)].value;
}
Tensor& ParamStore::grad(const std::string& name) { return entries_[index_of(name)].grad; }
const Tensor& ParamStore::grad(const std::string& name) const {
    return entries_[index_of(name)].grad;
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) {
        for (std::size_t i = 0; i < e.grad.size(); ++i) e.grad[i] = 0.0;
    }
}

void ParamStore::reset_optimizer() {
    for (auto& e : entries_) {
        for (std::size_t i = 0; i < e.m.size(); ++i) {
            e.m[i] = 0.0;
            e.v[i] = 0.0;
        }
    }
    step_ = 0;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

void ParamStore::adam_step(const AdamConfig& cfg) {
    for (std::size_t p = 0; p < entries_.size(); ++p) {
        if (!entries_[p].grad.all_finite()) {
            throw std::runtime_error("non-finite gradient for parameter '" + names_[p] +
                                     "'; aborting update");
        }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (auto& e : entries_) {
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const double g = e.grad[i];
            e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
            e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = e.m[i] / bc1;
            const double vhat = e.v[i] / bc2;
            e.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape(ParamStore* params) : params_(params) {}

NodeId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::Node& Tape::node(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }
const Tape::Node& Tape::node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }

void Tape::check_id(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
        throw std::invalid_argument("invalid tape node id " + std::to_string(id));
    }
}

void Tape::fail(Op op, const std::string& msg, NodeId a, NodeId b) const {
    std::string s = std::string(op_name(op)) + ": " + msg + " (operand node " +
                    std::to_string(a) + " " + node(a).value.shape_str();
    if (b >= 0) s += ", node " + std::to_string(b) + " " + node(b).value.shape_str();
    s += ")";
    throw std::invalid_argument(s);
}

NodeId Tape::constant(Tensor v) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(v);
    return push(std::move(n));
}

NodeId Tape::input(Tensor v) {
    Node n;
    n.op = Op::Input;
    n.needs_grad = true;
    n.value = std::move(v);
    return push(std::move(n));
}

NodeId Tape::param(const std::string& name) {
    if (!params_) throw std::invalid_argument("tape has no parameter store");
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return it->second;
    Node n;
    n.op = Op::Param;
    n.needs_grad = true;
    n.param_index = static_cast<std::int32_t>(params_->index_of(name));
    n.value = params_->value(name);
    const NodeId id = push(std::move(n));
    param_nodes_[name] = id;
    return id;
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    const Tensor& av = node(a).value;
    const Tensor& bv = node(b).value;
    if (av.cols() != bv.rows()) fail(Op::MatMul, "inner dimensions differ", a, b);
    Node n;
    n.op = Op::MatMul;
    n.a = a;
    n.b = b;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.value = Tensor({av.rows(), bv.cols()});
    kernels::matmul(av.data(), bv.data(), n.value.data(), av.rows(), av.cols(), bv.cols());
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    const Tensor& av = node(a).value;
    const Tensor& bv = node(b).value;
    const bool a_big = av.size() >= bv.size();
    const Tensor& big = a_big ? av : bv;
    const Tensor& small = a_big ? bv : av;
    Bcast bc;
    if (!classify_bcast(big, small, bc)) fail(Op::Add, "shapes not broadcastable", a, b);
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.value = Tensor(big.shape());
    const int rows = big.rows(), cols = big.cols();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const std::size_t bi = static_cast<std::size_t>(r) * cols + c;
            const std::size_t si = bcast_index(bc, r, c, cols);
            n.value[bi] = a_big ? av[bi] + bv[si] : av[si] + bv[bi];
        }
    }
    return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    const Tensor& av = node(a).value;
    const Tensor& bv = node(b).value;
    const bool a_big = av.size() >= bv.size();
    const Tensor& big = a_big ? av : bv;
    const Tensor& small = a_big ? bv : av;
    Bcast bc;
    if (!classify_bcast(big, small, bc)) fail(Op::Sub, "shapes not broadcastable", a, b);
    Node n;
    n.op = Op::Sub;
    n.a = a;
    n.b = b;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.value = Tensor(big.shape());
    const int rows = big.rows(), cols = big.cols();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const std::size_t bi = static_cast<std::size_t>(r) * cols + c;
            const std::size_t si = bcast_index(bc, r, c, cols);
            n.value[bi] = a_big ? av[bi] - bv[si] : av[si] - bv[bi];
        }
    }
    return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    const Tensor& av = node(a).value;
    const Tensor& bv = node(b).value;
    const bool a_big = av.size() >= bv.size();
    const Tensor& big = a_big ? av : bv;
    const Tensor& small = a_big ? bv : av;
    Bcast bc;
    if (!classify_bcast(big, small, bc)) fail(Op::Mul, "shapes not broadcastable", a, b);
    Node n;
    n.op = Op::Mul;
    n.a = a;
    n.b = b;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.value = Tensor(big.shape());
    const int rows = big.rows(), cols = big.cols();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const std::size_t bi = static_cast<std::size_t>(r) * cols + c;
            const std::size_t si = bcast_index(bc, r, c, cols);
            n.value[bi] = a_big ? av[bi] * bv[si] : av[si] * bv[bi];
        }
    }
    return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double c) {
    check_id(a);
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.c = c;
    n.needs_grad = node(a).needs_grad;
    n.value = node(a).value;
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] *= c;
    return push(std::move(n));
}

NodeId Tape::relu(NodeId a) {
    check_id(a);
    Node n;
    n.op = Op::Relu;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    n.value = node(a).value;
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = n.value[i] > 0.0 ? n.value[i] : 0.0;
    return push(std::move(n));
}

NodeId Tape::tanh(NodeId a) {
    check_id(a);
    Node n;
    n.op = Op::Tanh;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    n.value = node(a).value;
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::tanh(n.value[i]);
    return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId a) {
    check_id(a);
    Node n;
    n.op = Op::Sigmoid;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    n.value = node(a).value;
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = 1.0 / (1.0 + std::exp(-n.value[i]));
    return push(std::move(n));
}

NodeId Tape::softmax(NodeId a) {
    check_id(a);
    Node n;
    n.op = Op::Softmax;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    const Tensor& x = node(a).value;
    n.value = Tensor(x.shape());
    const int rows = x.rows(), cols = x.cols();
    for (int r = 0; r < rows; ++r) {
        const double* xr = x.data() + static_cast<std::size_t>(r) * cols;
        double* yr = n.value.data() + static_cast<std::size_t>(r) * cols;
        double mx = xr[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        double denom = 0.0;
        for (int c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            denom += yr[c];
        }
        for (int c = 0; c < cols; ++c) yr[c] /= denom;
    }
    return push(std::move(n));
}

NodeId Tape::exp(NodeId a) {
    check_id(a);
    Node n;
    n.op = Op::Exp;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    n.value = node(a).value;
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::exp(n.value[i]);
    if (!n.value.all_finite()) fail(Op::Exp, "overflow to non-finite value", a);
    return push(std::move(n));
}

NodeId Tape::log(NodeId a) {
    check_id(a);
    Node n;
    n.op = Op::Log;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    n.value = node(a).value;
    for (std::size_t i = 0; i < n.value.size(); ++i) {
        if (n.value[i] <= 0.0) fail(Op::Log, "domain error: input must be positive", a);
        n.value[i] = std::log(n.value[i]);
    }
    return push(std::move(n));
}

NodeId Tape::sqrt(NodeId a) {
    check_id(a);
    Node n;
    n.op = Op::Sqrt;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    n.value = node(a).value;
    for (std::size_t i = 0; i < n.value.size(); ++i) {
        if (n.value[i] < 0.0) fail(Op::Sqrt, "domain error: input must be nonnegative", a);
        n.value[i] = std::sqrt(n.value[i]);
    }
    return push(std::move(n));
}

NodeId Tape::sum(NodeId a) {
    check_id(a);
    Node n;
    n.op = Op::Sum;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    double acc = 0.0;
    const Tensor& x = node(a).value;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

NodeId Tape::mean(NodeId a) {
    check_id(a);
    Node n;
    n.op = Op::Mean;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    double acc = 0.0;
    const Tensor& x = node(a).value;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
    n.value = Tensor::scalar(acc / static_cast<double>(x.size()));
    return push(std::move(n));
}

NodeId Tape::squared_l2(NodeId a) {
    check_id(a);
    Node n;
    n.op = Op::SquaredL2;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    double acc = 0.0;
    const Tensor& x = node(a).value;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * x[i];
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

NodeId Tape::concat(NodeId a, NodeId b, int axis) {
    check_id(a);
    check_id(b);
    if (axis != 0 && axis != 1) fail(Op::Concat, "axis must be 0 or 1", a, b);
    const Tensor& av = node(a).value;
    const Tensor& bv = node(b).value;
    Node n;
    n.op = Op::Concat;
    n.a = a;
    n.b = b;
    n.axis = axis;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    if (axis == 0) {
        if (av.cols() != bv.cols()) fail(Op::Concat, "column counts differ", a, b);
        n.value = Tensor({av.rows() + bv.rows(), av.cols()});
        std::size_t o = 0;
        for (std::size_t i = 0; i < av.size(); ++i) n.value[o++] = av[i];
        for (std::size_t i = 0; i < bv.size(); ++i) n.value[o++] = bv[i];
    } else {
        if (av.rows() != bv.rows()) fail(Op::Concat, "row counts differ", a, b);
        n.value = Tensor({av.rows(), av.cols() + bv.cols()});
        for (int r = 0; r < av.rows(); ++r) {
            for (int c = 0; c < av.cols(); ++c) n.value.at(r, c) = av.at(r, c);
            for (int c = 0; c < bv.cols(); ++c) n.value.at(r, av.cols() + c) = bv.at(r, c);
        }
    }
    return push(std::move(n));
}

NodeId Tape::concat(const std::vector<NodeId>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: empty part list");
    NodeId acc = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) acc = concat(acc, parts[i], axis);
    return acc;
}

NodeId Tape::slice(NodeId a, int axis, int start, int len) {
    check_id(a);
    if (axis != 0 && axis != 1) fail(Op::Slice, "axis must be 0 or 1", a);
    const Tensor& av = node(a).value;
    const int extent = axis == 0 ? av.rows() : av.cols();
    if (start < 0 || len < 1 || start + len > extent) {
        fail(Op::Slice, "range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                            ") out of bounds", a);
    }
    Node n;
    n.op = Op::Slice;
    n.a = a;
    n.axis = axis;
    n.start = start;
    n.len = len;
    n.needs_grad = node(a).needs_grad;
    if (axis == 0) {
        n.value = Tensor({len, av.cols()});
        for (int r = 0; r < len; ++r) {
            for (int c = 0; c < av.cols(); ++c) n.value.at(r, c) = av.at(start + r, c);
        }
    } else {
        n.value = Tensor({av.rows(), len});
        for (int r = 0; r < av.rows(); ++r) {
            for (int c = 0; c < len; ++c) n.value.at(r, c) = av.at(r, start + c);
        }
    }
    return push(std::move(n));
}

NodeId Tape::transpose(NodeId a) {
    check_id(a);
    const Tensor& av = node(a).value;
    Node n;
    n.op = Op::Transpose;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    n.value = Tensor({av.cols(), av.rows()});
    for (int r = 0; r < av.rows(); ++r) {
        for (int c = 0; c < av.cols(); ++c) n.value.at(c, r) = av.at(r, c);
    }
    return push(std::move(n));
}

NodeId Tape::reshape(NodeId a, std::vector<int> shape) {
    check_id(a);
    Node n;
    n.op = Op::Reshape;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    n.value = node(a).value.reshaped(std::move(shape));
    return push(std::move(n));
}

const Tensor& Tape::value(NodeId id) const {
    check_id(id);
    return node(id).value;
}

double Tape::scalar(NodeId id) const {
    check_id(id);
    const Tensor& v = node(id).value;
    if (v.size() != 1) throw std::invalid_argument("node is not scalar: " + v.shape_str());
    return v[0];
}

void Tape::accumulate(NodeId id, const Tensor& g) {
    Node& n = node(id);
    if (!n.grad_live) {
        n.grad = Tensor::zeros(n.value.shape());
        n.grad_live = true;
    }
    if (g.size() != n.grad.size()) {
        throw std::invalid_argument("gradient shape mismatch at node " + std::to_string(id));
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Tape::backward(NodeId root) {
    check_id(root);
    if (node(root).value.size() != 1) {
        throw std::invalid_argument("backward without output gradient requires a scalar root");
    }
    backward(root, Tensor::scalar(1.0));
}

void Tape::backward(NodeId root, const Tensor& output_grad) {
    if (nodes_.empty()) throw std::runtime_error("backward before any forward evaluation");
    check_id(root);
    if (!output_grad.same_shape(node(root).value) && output_grad.size() != node(root).value.size()) {
        throw std::invalid_argument("output gradient shape " + output_grad.shape_str() +
                                    " does not match root " + node(root).value.shape_str());
    }
    for (auto& n : nodes_) {
        n.grad_live = false;
    }
    accumulate(root, output_grad);

    for (NodeId id = root; id >= 0; --id) {
        Node& n = node(id);
        if (!n.grad_live || !n.needs_grad) continue;
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::Constant:
            case Op::Input:
                break;
            case Op::Param:
                if (params_) {
                    Tensor& pg = params_->entries_[n.param_index].grad;
                    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g[i];
                }
                break;
            case Op::MatMul: {
                const Tensor& av = node(n.a).value;
                const Tensor& bv = node(n.b).value;
                if (node(n.a).needs_grad) {
                    // dA = G * B^T
                    Tensor bt({bv.cols(), bv.rows()});
                    for (int r = 0; r < bv.rows(); ++r)
                        for (int c = 0; c < bv.cols(); ++c) bt.at(c, r) = bv.at(r, c);
                    Tensor da({av.rows(), av.cols()});
                    kernels::matmul(g.data(), bt.data(), da.data(), g.rows(), g.cols(), bv.rows());
                    accumulate(n.a, da);
                }
                if (node(n.b).needs_grad) {
                    // dB = A^T * G
                    Tensor at({av.cols(), av.rows()});
                    for (int r = 0; r < av.rows(); ++r)
                        for (int c = 0; c < av.cols(); ++c) at.at(c, r) = av.at(r, c);
                    Tensor db({bv.rows(), bv.cols()});
                    kernels::matmul(at.data(), g.data(), db.data(), av.cols(), av.rows(), g.cols());
                    accumulate(n.b, db);
                }
                break;
            }
            case Op::Add:
            case Op::Sub:
            case Op::Mul: {
                const Tensor& av = node(n.a).value;
                const Tensor& bv = node(n.b).value;
                const bool a_big = av.size() >= bv.size();
                const Tensor& big = a_big ? av : bv;
                const Tensor& small = a_big ? bv : av;
                Bcast bc;
                classify_bcast(big, small, bc);
                const int rows = big.rows(), cols = big.cols();
                auto grad_for = [&](bool for_a) -> Tensor {
                    const bool operand_is_big = (for_a == a_big);
                    const Tensor& self = for_a ? av : bv;
                    const Tensor& other = for_a ? bv : av;
                    Tensor full(big.shape());
                    for (int r = 0; r < rows; ++r) {
                        for (int c = 0; c < cols; ++c) {
                            const std::size_t bi = static_cast<std::size_t>(r) * cols + c;
                            double gv = g[bi];
                            if (n.op == Op::Sub && !for_a) gv = -gv;
                            if (n.op == Op::Mul) {
                                const std::size_t oi = (for_a == a_big)
                                                           ? bcast_index(bc, r, c, cols)
                                                           : bi;
                                gv *= other[oi];
                            }
                            full[bi] = gv;
                        }
                    }
                    if (operand_is_big) return full;
                    return reduce_bcast(full, self, bc);
                };
                if (node(n.a).needs_grad) accumulate(n.a, grad_for(true));
                if (node(n.b).needs_grad) accumulate(n.b, grad_for(false));
                break;
            }
            case Op::Scale: {
                Tensor da(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * n.c;
                accumulate(n.a, da);
                break;
            }
            case Op::Relu: {
                const Tensor& x = node(n.a).value;
                Tensor da(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) da[i] = x[i] > 0.0 ? g[i] : 0.0;
                accumulate(n.a, da);
                break;
            }
            case Op::Tanh: {
                Tensor da(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * (1.0 - n.value[i] * n.value[i]);
                accumulate(n.a, da);
                break;
            }
            case Op::Sigmoid: {
                Tensor da(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i)
                    da[i] = g[i] * n.value[i] * (1.0 - n.value[i]);
                accumulate(n.a, da);
                break;
            }
            case Op::Softmax: {
                const Tensor& y = n.value;
                Tensor da(y.shape());
                const int rows = y.rows(), cols = y.cols();
                for (int r = 0; r < rows; ++r) {
                    const std::size_t off = static_cast<std::size_t>(r) * cols;
                    double dot = 0.0;
                    for (int c = 0; c < cols; ++c) dot += g[off + c] * y[off + c];
                    for (int c = 0; c < cols; ++c) da[off + c] = y[off + c] * (g[off + c] - dot);
                }
                accumulate(n.a, da);
                break;
            }
            case Op::Exp: {
                Tensor da(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * n.value[i];
                accumulate(n.a, da);
                break;
            }
            case Op::Log: {
                const Tensor& x = node(n.a).value;
                Tensor da(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] / x[i];
                accumulate(n.a, da);
                break;
            }
            case Op::Sqrt: {
                Tensor da(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * 0.5 / n.value[i];
                accumulate(n.a, da);
                break;
            }
            case Op::Sum: {
                const Tensor& x = node(n.a).value;
                accumulate(n.a, Tensor::full(x.shape(), g[0]));
                break;
            }
            case Op::Mean: {
                const Tensor& x = node(n.a).value;
                accumulate(n.a, Tensor::full(x.shape(), g[0] / static_cast<double>(x.size())));
                break;
            }
            case Op::SquaredL2: {
                const Tensor& x = node(n.a).value;
                Tensor da(x.shape());
                for (std::size_t i = 0; i < x.size(); ++i) da[i] = 2.0 * x[i] * g[0];
                accumulate(n.a, da);
                break;
            }
            case Op::Concat: {
                const Tensor& av = node(n.a).value;
                const Tensor& bv = node(n.b).value;
                if (n.axis == 0) {
                    if (node(n.a).needs_grad) {
                        Tensor da(av.shape());
                        for (std::size_t i = 0; i < av.size(); ++i) da[i] = g[i];
                        accumulate(n.a, da);
                    }
                    if (node(n.b).needs_grad) {
                        Tensor db(bv.shape());
                        for (std::size_t i = 0; i < bv.size(); ++i) db[i] = g[av.size() + i];
                        accumulate(n.b, db);
                    }
                } else {
                    if (node(n.a).needs_grad) {
                        Tensor da(av.shape());
                        for (int r = 0; r < av.rows(); ++r)
                            for (int c = 0; c < av.cols(); ++c)
                                da.at(r, c) = g[static_cast<std::size_t>(r) * n.value.cols() + c];
                        accumulate(n.a, da);
                    }
                    if (node(n.b).needs_grad) {
                        Tensor db(bv.shape());
                        for (int r = 0; r < bv.rows(); ++r)
                            for (int c = 0; c < bv.cols(); ++c)
                                db.at(r, c) =
                                    g[static_cast<std::size_t>(r) * n.value.cols() + av.cols() + c];
                        accumulate(n.b, db);
                    }
                }
                break;
            }
            case Op::Slice: {
                const Tensor& av = node(n.a).value;
                Tensor da = Tensor::zeros(av.shape());
                if (n.axis == 0) {
                    for (int r = 0; r < n.len; ++r)
                        for (int c = 0; c < av.cols(); ++c)
                            da.at(n.start + r, c) = g[static_cast<std::size_t>(r) * av.cols() + c];
                } else {
                    for (int r = 0; r < av.rows(); ++r)
                        for (int c = 0; c < n.len; ++c)
                            da.at(r, n.start + c) = g[static_cast<std::size_t>(r) * n.len + c];
                }
                accumulate(n.a, da);
                break;
            }
            case Op::Transpose: {
                const Tensor& av = node(n.a).value;
                Tensor da(av.shape());
                for (int r = 0; r < av.rows(); ++r)
                    for (int c = 0; c < av.cols(); ++c)
                        da.at(r, c) = g[static_cast<std::size_t>(c) * av.rows() + r];
                accumulate(n.a, da);
                break;
            }
            case Op::Reshape: {
                accumulate(n.a, g.reshaped(node(n.a).value.shape()));
                break;
            }
        }
    }
    ran_backward_ = true;
}

Tensor Tape::grad(NodeId id) const {
    check_id(id);
    if (!ran_backward_) throw std::runtime_error("gradient requested before backward");
    const Node& n = node(id);
    if (!n.grad_live) return Tensor::zeros(n.value.shape());
    return n.grad;
}

}  // namespace dtd::ad
