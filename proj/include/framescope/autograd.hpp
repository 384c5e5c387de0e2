#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "framescope/rollout.hpp"

namespace framescope::autograd {

// Reverse-mode tape over dense 64-bit matrices. Scalars are 1x1. Nodes are
// owned by the tape and live until it is destroyed; pointers handed out stay
// valid. Gradient only flows through nodes that descend from a parameter, so
// passes built purely from constants cost nothing on the way back.
struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    bool needs_grad = false;
    std::function<void(Node&)> backward;  // adds into parents' grads

    double scalar() const { return value(0, 0); }
};

using Var = Node*;

class Tape {
public:
    Var constant(Eigen::MatrixXd v);
    Var parameter(Eigen::MatrixXd v);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);  // elementwise
    Var scale(Var a, double c);
    Var add_const(Var a, const Eigen::MatrixXd& c);
    Var add_scalar(Var a, double c);
    Var mul_const(Var a, const Eigen::MatrixXd& c);      // elementwise by constant
    Var rowwise_mul_const(Var a, const Eigen::RowVectorXd& g);

    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);  // a * b^T

    Var slice_rows(Var a, int begin, int count);
    Var slice_cols(Var a, int begin, int count);
    Var concat_rows(const std::vector<Var>& parts);
    Var mean_rows(Var a, int begin, int count);  // -> 1 x C

    Var sum(Var a);                 // -> 1 x 1
    Var square(Var a);
    Var log(Var a);                 // elementwise, inputs must stay positive
    Var silu(Var a);
    Var divide_by_scalar(Var a, Var s);  // s is 1 x 1

    Var rms_norm(Var a, double eps = 1e-6);
    Var softmax_rows_masked(Var scores, const BoolMatrix& mask);
    Var row_normalize(Var a);
    Var col_scale(Var a, const Eigen::VectorXd& s);

    // Mean over `rows` of logsumexp(logits[row]) - logits[row, target].
    Var cross_entropy(Var logits, const std::vector<int>& rows, const std::vector<int>& targets);

    // Seeds d(loss) = 1 and walks the tape backwards.
    void backward(Var loss);

    size_t size() const { return nodes_.size(); }

private:
    Var fresh(Eigen::MatrixXd value, bool needs_grad);
    std::vector<std::unique_ptr<Node>> nodes_;
};

}  // namespace framescope::autograd
