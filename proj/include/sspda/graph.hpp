#pragma once

#include <vector>

#include "sspda/tensor.hpp"

namespace sspda {

/// Reverse-mode differentiation tape. Nodes are appended in forward order
/// (so the record is already topologically sorted) and evaluated eagerly;
/// backward() replays the records in exact reverse order. A graph supports
/// one backward pass; a second call without a fresh forward is an error.
///
/// A graph and its tensors belong to one thread for the duration of a
/// forward/backward pass. Distinct graphs are independent.
class Graph {
public:
    using NodeId = int;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Differentiable leaf backed by an external parameter tensor. backward()
    // accumulates into t.grad(). Registering the same tensor twice returns
    // the same node.
    NodeId param(Tensor& t);

    // Constant leaf (input data); never receives gradient.
    NodeId input(Tensor t);

    // out[b,o] = sum_i x[b,i] * w[i,o] + bias[o]
    NodeId dense(NodeId x, NodeId w, NodeId bias);

    // Valid (no padding) cross-correlation. x:[B,Ci,H,W], k:[Co,Ci,K,K],
    // output spatial side floor((H-K)/stride)+1.
    NodeId conv2d(NodeId x, NodeId k, int stride);

    NodeId relu(NodeId x);

    // Windowed max with stride == window; window must divide both spatial dims.
    NodeId max_pool2d(NodeId x, int window);

    // [B,C,H,W] -> [B,C], spatial mean per channel.
    NodeId global_avg_pool(NodeId x);

    // Row softmax, max-subtraction stabilized. [B,C] -> [B,C].
    NodeId softmax(NodeId logits);

    // Logistic. clamp_eps > 0 pins the output to [eps, 1-eps] so downstream
    // logs stay finite; gradient is zero where the clamp binds.
    NodeId sigmoid(NodeId x, double clamp_eps = 0.0);

    // Mean over rows of row_weight * (-log softmax(logits)[label]).
    // Empty weights mean all ones. Natural log.
    NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels,
                                 std::vector<double> row_weights = {});

    // Mean over rows of row_weight * (-sum_l class_weight_l * p_l ln p_l),
    // with 0 ln 0 = 0. Rows must be nonnegative and sum to 1 within 1e-6.
    NodeId entropy_loss(NodeId probabilities, std::vector<double> row_weights = {},
                        std::vector<double> class_weights = {});

    // Mean over rows of row_weight * -(d ln p + (1-d) ln(1-p)) with p
    // clamped to [1e-7, 1-1e-7]. prob:[B,1], labels in {0,1}.
    NodeId binary_cross_entropy(NodeId prob, std::vector<int> domain_labels,
                                std::vector<double> row_weights = {});

    // Identity forward; backward multiplies the incoming gradient by -lambda.
    NodeId gradient_reversal(NodeId x, double lambda);

    // Forward lambda * x; backward passes -incoming to the child, regardless
    // of lambda. Used to report a maximized term inside a minimized total
    // while routing the maximizing player's descent direction down the branch.
    NodeId adversarial_scale(NodeId x, double lambda);

    NodeId add(NodeId a, NodeId b);
    NodeId scale(NodeId x, double s);

    const Tensor& value(NodeId id) const;

    // Gradient buffer of a node (after backward). Mostly for tests.
    const std::vector<double>& node_grad(NodeId id) const;

    // Backpropagate from a scalar node. Accumulates into the grad buffers of
    // all registered parameter tensors (callers zero those beforehand).
    void backward(NodeId root);

    int size() const { return static_cast<int>(nodes_.size()); }

private:
    enum class Op {
        kParam,
        kInput,
        kDense,
        kConv2d,
        kRelu,
        kMaxPool,
        kGap,
        kSoftmax,
        kSigmoid,
        kSoftmaxXent,
        kEntropy,
        kBce,
        kGradRev,
        kAdvScale,
        kAdd,
        kScale,
    };

    struct Node {
        Op op;
        int in0 = -1, in1 = -1, in2 = -1;
        Tensor out;
        std::vector<double> grad;  // allocated lazily, same numel as out
        bool needs_grad = false;
        Tensor* external = nullptr;  // kParam only
        int iarg = 0;                // stride / window
        double darg = 0.0;           // lambda / scale factor
        std::vector<int> labels;     // class or domain labels; pool argmax
        std::vector<double> row_w;   // per-row weights
        std::vector<double> aux;     // cached softmax probs / clamped probs
    };

    NodeId push(Node n);
    Node& at(NodeId id);
    const Node& at(NodeId id) const;
    std::vector<double>& grad_buf(Node& n);
    void backward_node(Node& n);

    std::vector<Node> nodes_;
    std::vector<std::pair<Tensor*, NodeId>> registered_params_;
    bool backward_done_ = false;
};

}  // namespace sspda
