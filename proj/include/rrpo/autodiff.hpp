#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rrpo/common.hpp"

namespace rrpo::ad {

using Arr = Eigen::ArrayXXd;

// One recorded operation (or leaf) in a define-by-run graph. Nodes form a DAG
// through `inputs`; the graph is rebuilt on every forward pass and freed when
// the last Tensor handle goes out of scope.
struct Node {
    Arr value;
    Arr grad;  // allocated on demand; same shape as value
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Pulls this node's grad into the grads of its inputs.
    std::function<void(Node&)> backprop;

    bool has_grad() const { return grad.size() == value.size() && grad.size() > 0; }
    void ensure_grad() {
        if (!has_grad()) grad = Arr::Zero(value.rows(), value.cols());
    }
};

// Value-semantics handle onto a graph node.
class Tensor {
  public:
    Tensor() = default;

    static Tensor leaf(Arr value, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Arr& value() const { return node_->value; }
    Arr& mutable_value() { return node_->value; }
    const Arr& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    Eigen::Index size() const { return node_->value.size(); }
    bool is_scalar() const { return size() == 1; }
    double item() const;
    void zero_grad() {
        node_->ensure_grad();
        node_->grad.setZero();
    }

    std::shared_ptr<Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  private:
    std::shared_ptr<Node> node_;
};

// Topologically ordered view of the operations reachable from one root.
struct ComputeGraph {
    std::vector<Node*> order;  // inputs before outputs
};

ComputeGraph toposort(const Tensor& root);

// Reverse sweep from a scalar loss. Grads of every node reachable from the
// loss are zeroed first, so repeated calls are idempotent.
void backward(const Tensor& loss);

// Primitives. Shapes must conform exactly (no broadcasting); every primitive
// checks its inputs and its output for non-finite values.
Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double c);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor mul(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sum(const Tensor& a);  // -> 1x1
Tensor sigmoid(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);
Tensor softmax(const Tensor& a);      // row-wise
Tensor log_softmax(const Tensor& a);  // row-wise, max-subtracted
// out(i,0) = a(i, cols[i])
Tensor gather(const Tensor& a, const std::vector<int>& cols);
// out.row(i) = a.row(rows[i]); backward scatter-adds (embedding lookup)
Tensor take_rows(const Tensor& a, const std::vector<int>& rows);
// Row-wise x / sqrt(mean(x^2) + eps)
Tensor rms_norm(const Tensor& a, double eps = 1e-8);
// Forward identity, no gradient flow.
Tensor detach(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return mul(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul(a, c); }

}  // namespace rrpo::ad
