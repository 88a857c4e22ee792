#pragma once

#include <functional>
#include <string>
#include <vector>

#include "edmsr/params.hpp"
#include "edmsr/tensor.hpp"

namespace edmsr {

// Reverse-mode tape. A graph instance records one forward pass; backward()
// walks the tape once and accumulates parameter gradients into the bound
// ParameterStore entries (+=, so micro-batch gradients accumulate across
// graphs). Rebuild a fresh graph for every step.
//
// Activation layouts: 2D convs use (B,C,H,W), 3D convs (B,C,D,H,W),
// attention (B,heads,S,head_dim), linear acts on the last dim.
class Graph {
public:
    using NodeId = int32_t;

    explicit Graph(bool check_finite = true) : check_finite_(check_finite) {}

    // ---- leaves ----
    NodeId input(Tensor value);                // constant, no gradient
    NodeId input_grad(Tensor value);           // leaf that receives a gradient (tests)
    NodeId param(ParameterStore& store, const std::string& name);

    // ---- primitives ----
    NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride = 1);
    NodeId conv3d(NodeId x, NodeId w, NodeId b, int stride = 1);
    NodeId nearest_up2(NodeId x);              // nearest-neighbor x2 on all spatial dims
    NodeId linear(NodeId x, NodeId w, NodeId b);
    NodeId silu(NodeId x);
    NodeId group_norm(NodeId x, NodeId gamma, NodeId beta, int groups);  // eps 1e-5
    NodeId attention(NodeId q, NodeId k, NodeId v);  // softmax(QK^T/sqrt(d))V per head
    NodeId concat_channels(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId scale_shift(NodeId x, NodeId scale, NodeId shift);  // y = x*(1+s)+t, (B,C) over spatial

    // ---- layout / plumbing ----
    NodeId reshape(NodeId x, std::vector<int64_t> shape);
    NodeId channels_last(NodeId x);                                  // (B,C,sp..) -> (B,S,C)
    NodeId channels_first(NodeId x, std::vector<int64_t> spatial);   // inverse
    NodeId split_heads(NodeId x, int heads);                         // (B,S,C) -> (B,h,S,C/h)
    NodeId merge_heads(NodeId x);                                    // inverse
    NodeId slice_last(NodeId x, int64_t start, int64_t len);
    NodeId sample_scale(NodeId x, std::vector<double> coeff);        // y[b,..] = coeff[b]*x[b,..]
    NodeId mul_scalar(NodeId x, double s);

    // ---- reductions ----
    NodeId mse(NodeId a, NodeId b);            // scalar mean((a-b)^2)
    NodeId weighted_sum(NodeId x, Tensor weights);  // scalar sum(x .* w)

    const Tensor& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    bool needs_grad(NodeId id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

    // Gradient of the last backward() with respect to node id. Only nodes on
    // a path to a gradient-bearing leaf hold gradients.
    const Tensor& grad(NodeId id) const;

    // Seeds d(loss)/d(loss)=1, walks the tape in reverse, then adds leaf
    // gradients into the bound store tensors. Throws if called twice.
    void backward(NodeId loss);

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<NodeId> inputs;
        std::function<void(Graph&, NodeId)> back;  // may be empty (leaf / constant)
        bool needs_grad = false;
        Tensor* bound   = nullptr;  // store tensor for parameter leaves
        const char* op  = "leaf";
    };

    NodeId push(Node node, const char* op);
    bool any_input_needs_grad(const std::vector<NodeId>& ids) const;
    Tensor& grad_buf(NodeId id);
    void add_grad(NodeId id, const std::vector<double>& g);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<char> grad_alloc_;
    bool backward_done_ = false;
    bool check_finite_  = true;

    friend struct ConvKernels;
};

// Central finite-difference gradient verification of a scalar-valued closure
// against the tape's analytic gradients.
struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int64_t coords_checked = 0;
    std::string worst_param;
};

using BuildLossFn = std::function<Graph::NodeId(Graph&)>;

// `build_loss` must deterministically rebuild the forward graph and return
// the scalar loss node. Checks >= n_coords randomly chosen trainable
// parameter coordinates with central differences of step h.

GradCheckReport grad_check(ParameterStore& store, const BuildLossFn& build_loss,
                           int64_t n_coords, double h, uint64_t seed);

}  // namespace edmsr
