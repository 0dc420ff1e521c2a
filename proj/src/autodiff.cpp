#include "rrpo/autodiff.hpp"

#include <cmath>
#include <unordered_set>

namespace rrpo::ad {

namespace {

void check_finite(const Arr& v, const char* op, const char* what) {
    if (!v.allFinite()) {
        throw NumericError(std::string(op) + ": non-finite " + what);
    }
}

std::shared_ptr<Node> make_op(const char* op, Arr value,
                              std::vector<std::shared_ptr<Node>> inputs,
                              std::function<void(Node&)> backprop) {
    check_finite(value, op, "output");
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = op;
    for (const auto& in : inputs) {
        if (in->requires_grad) n->requires_grad = true;
    }
    n->inputs = std::move(inputs);
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

const Arr& in_value(const Tensor& t, const char* op) {
    if (!t.defined()) throw UsageError(std::string(op) + ": undefined tensor");
    check_finite(t.node()->value, op, "input");
    return t.node()->value;
}

void require_same_shape(const Arr& a, const Arr& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
    }
}

void accumulate(Node& dst, const Arr& g) {
    dst.ensure_grad();
    dst.grad += g;
}

double softplus(double t) {
    // log(1 + e^t) without overflow
    return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

}  // namespace

Tensor Tensor::leaf(Arr value, bool requires_grad) {
    check_finite(value, "leaf", "value");
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    Arr a(1, 1);
    a(0, 0) = v;
    return leaf(std::move(a), requires_grad);
}

double Tensor::item() const {
    if (!is_scalar()) throw UsageError("item: tensor is not scalar");
    return node_->value(0, 0);
}

ComputeGraph toposort(const Tensor& root) {
    ComputeGraph g;
    if (!root.defined()) return g;
    std::unordered_set<const Node*> seen;
    // Iterative post-order DFS; child visit order is the recorded input order,
    // which makes the sweep (and thus gradient accumulation) deterministic.
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            g.order.push_back(node);
            stack.pop_back();
        }
    }
    return g;
}

void backward(const Tensor& loss) {
    if (!loss.defined() || !loss.is_scalar()) {
        throw UsageError("backward: loss must be a defined scalar tensor");
    }
    ComputeGraph g = toposort(loss);
    for (Node* n : g.order) {
        n->ensure_grad();
        n->grad.setZero();
    }
    loss.node()->grad(0, 0) = 1.0;
    for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    const Arr &av = in_value(a, "add"), &bv = in_value(b, "add");
    require_same_shape(av, bv, "add");
    return Tensor(make_op("add", av + bv, {a.node(), b.node()}, [](Node& n) {
        if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], n.grad);
        if (n.inputs[1]->requires_grad) accumulate(*n.inputs[1], n.grad);
    }));
}

Tensor add(const Tensor& a, double c) {
    const Arr& av = in_value(a, "add_scalar");
    if (!std::isfinite(c)) throw NumericError("add_scalar: non-finite constant");
    return Tensor(make_op("add_scalar", av + c, {a.node()}, [](Node& n) {
        if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], n.grad);
    }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const Arr &av = in_value(a, "sub"), &bv = in_value(b, "sub");
    require_same_shape(av, bv, "sub");
    return Tensor(make_op("sub", av - bv, {a.node(), b.node()}, [](Node& n) {
        if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], n.grad);
        if (n.inputs[1]->requires_grad) accumulate(*n.inputs[1], -n.grad);
    }));
}

Tensor neg(const Tensor& a) {
    const Arr& av = in_value(a, "neg");
    return Tensor(make_op("neg", -av, {a.node()}, [](Node& n) {
        if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], -n.grad);
    }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const Arr &av = in_value(a, "mul"), &bv = in_value(b, "mul");
    require_same_shape(av, bv, "mul");
    return Tensor(make_op("mul", av * bv, {a.node(), b.node()}, [](Node& n) {
        if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], n.grad * n.inputs[1]->value);
        if (n.inputs[1]->requires_grad) accumulate(*n.inputs[1], n.grad * n.inputs[0]->value);
    }));
}

Tensor mul(const Tensor& a, double c) {
    const Arr& av = in_value(a, "mul_scalar");
    if (!std::isfinite(c)) throw NumericError("mul_scalar: non-finite constant");
    return Tensor(make_op("mul_scalar", av * c, {a.node()}, [c](Node& n) {
        if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], n.grad * c);
    }));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Arr &av = in_value(a, "matmul"), &bv = in_value(b, "matmul");
    if (av.cols() != bv.rows()) {
        throw ShapeError("matmul: inner dimensions differ (" + std::to_string(av.cols()) + " vs " +
                         std::to_string(bv.rows()) + ")");
    }
    Arr out = (av.matrix() * bv.matrix()).array();
    return Tensor(make_op("matmul", std::move(out), {a.node(), b.node()}, [](Node& n) {
        const auto& A = n.inputs[0]->value;
        const auto& B = n.inputs[1]->value;
        if (n.inputs[0]->requires_grad) {
            accumulate(*n.inputs[0], (n.grad.matrix() * B.matrix().transpose()).array());
        }
        if (n.inputs[1]->requires_grad) {
            accumulate(*n.inputs[1], (A.matrix().transpose() * n.grad.matrix()).array());
        }
    }));
}

Tensor transpose(const Tensor& a) {
    const Arr& av = in_value(a, "transpose");
    return Tensor(make_op("transpose", av.transpose(), {a.node()}, [](Node& n) {
        if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], n.grad.transpose());
    }));
}

Tensor exp(const Tensor& a) {
    const Arr& av = in_value(a, "exp");
    return Tensor(make_op("exp", av.exp(), {a.node()}, [](Node& n) {
        if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], n.grad * n.value);
    }));
}

Tensor log(const Tensor& a) {
    const Arr& av = in_value(a, "log");
    if ((av <= 0.0).any()) throw NumericError("log: non-positive input");
    return Tensor(make_op("log", av.log(), {a.node()}, [](Node& n) {
        if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], n.grad / n.inputs[0]->value);
    }));
}

Tensor tanh(const Tensor& a) {
    const Arr& av = in_value(a, "tanh");
    return Tensor(make_op("tanh", av.tanh(), {a.node()}, [](Node& n) {
        if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], n.grad * (1.0 - n.value.square()));
    }));
}

Tensor sum(const Tensor& a) {
    const Arr& av = in_value(a, "sum");
    Arr out(1, 1);
    out(0, 0) = av.sum();
    return Tensor(make_op("sum", std::move(out), {a.node()}, [](Node& n) {
        if (n.inputs[0]->requires_grad) {
            Node& in = *n.inputs[0];
            in.ensure_grad();
            in.grad += n.grad(0, 0);
        }
    }));
}

Tensor sigmoid(const Tensor& a) {
    const Arr& av = in_value(a, "sigmoid");
    Arr out = av.unaryExpr([](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    });
    return Tensor(make_op("sigmoid", std::move(out), {a.node()}, [](Node& n) {
        if (n.inputs[0]->requires_grad) {
            accumulate(*n.inputs[0], n.grad * n.value * (1.0 - n.value));
        }
    }));
}

Tensor log_sigmoid(const Tensor& a) {
    const Arr& av = in_value(a, "log_sigmoid");
    Arr out = av.unaryExpr([](double x) { return -softplus(-x); });
    return Tensor(make_op("log_sigmoid", std::move(out), {a.node()}, [](Node& n) {
        if (n.inputs[0]->requires_grad) {
            // d/dx log(sigmoid(x)) = sigmoid(-x)
            Arr s = n.inputs[0]->value.unaryExpr([](double x) {
                return x >= 0.0 ? std::exp(-x) / (1.0 + std::exp(-x)) : 1.0 / (1.0 + std::exp(x));
            });
            accumulate(*n.inputs[0], n.grad * s);
        }
    }));
}

namespace {
Arr row_softmax(const Arr& z) {
    Arr out(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        Arr row = z.row(i);
        row -= row.maxCoeff();
        row = row.exp();
        out.row(i) = row / row.sum();
    }
    return out;
}
}  // namespace

Tensor softmax(const Tensor& a) {
    const Arr& av = in_value(a, "softmax");
    return Tensor(make_op("softmax", row_softmax(av), {a.node()}, [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Arr g(n.value.rows(), n.value.cols());
        for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
            const double dot = (n.grad.row(i) * n.value.row(i)).sum();
            g.row(i) = n.value.row(i) * (n.grad.row(i) - dot);
        }
        accumulate(*n.inputs[0], g);
    }));
}

Tensor log_softmax(const Tensor& a) {
    const Arr& av = in_value(a, "log_softmax");
    Arr out(av.rows(), av.cols());
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
        Arr row = av.row(i);
        row -= row.maxCoeff();
        out.row(i) = row - std::log(row.exp().sum());
    }
    return Tensor(make_op("log_softmax", std::move(out), {a.node()}, [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Arr g(n.value.rows(), n.value.cols());
        for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
            const double gsum = n.grad.row(i).sum();
            g.row(i) = n.grad.row(i) - n.value.row(i).exp() * gsum;
        }
        accumulate(*n.inputs[0], g);
    }));
}

Tensor gather(const Tensor& a, const std::vector<int>& cols) {
    const Arr& av = in_value(a, "gather");
    if (static_cast<Eigen::Index>(cols.size()) != av.rows()) {
        throw ShapeError("gather: need one column index per row");
    }
    Arr out(av.rows(), 1);
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
        const int c = cols[static_cast<size_t>(i)];
        if (c < 0 || c >= av.cols()) throw ShapeError("gather: column index out of range");
        out(i, 0) = av(i, c);
    }
    return Tensor(make_op("gather", std::move(out), {a.node()}, [cols](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Node& in = *n.inputs[0];
        in.ensure_grad();
        for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
            in.grad(i, cols[static_cast<size_t>(i)]) += n.grad(i, 0);
        }
    }));
}

Tensor take_rows(const Tensor& a, const std::vector<int>& rows) {
    const Arr& av = in_value(a, "take_rows");
    Arr out(static_cast<Eigen::Index>(rows.size()), av.cols());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= av.rows()) {
            throw ShapeError("take_rows: row index out of range");
        }
        out.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
    }
    return Tensor(make_op("take_rows", std::move(out), {a.node()}, [rows](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Node& in = *n.inputs[0];
        in.ensure_grad();
        for (size_t i = 0; i < rows.size(); ++i) {
            in.grad.row(rows[i]) += n.grad.row(static_cast<Eigen::Index>(i));
        }
    }));
}

Tensor rms_norm(const Tensor& a, double eps) {
    const Arr& av = in_value(a, "rms_norm");
    const double n_cols = static_cast<double>(av.cols());
    Arr out(av.rows(), av.cols());
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
        const double r = std::sqrt(av.row(i).square().mean() + eps);
        out.row(i) = av.row(i) / r;
    }
    return Tensor(make_op("rms_norm", std::move(out), {a.node()}, [eps, n_cols](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        const Arr& x = n.inputs[0]->value;
        Arr g(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double r = std::sqrt(x.row(i).square().mean() + eps);
            const double dot = (n.grad.row(i) * n.value.row(i)).sum();
            g.row(i) = (n.grad.row(i) - n.value.row(i) * (dot / n_cols)) / r;
        }
        accumulate(*n.inputs[0], g);
    }));
}

Tensor detach(const Tensor& a) {
    const Arr& av = in_value(a, "detach");
    return Tensor::leaf(av, false);
}

}  // namespace rrpo::ad
