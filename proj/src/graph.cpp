#include "sspda/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "sspda/errors.hpp"

namespace sspda {

namespace {

constexpr double kBceClamp = 1e-7;

void check_rank(const Tensor& t, int rank, const char* what) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                             " tensor, got " + t.shape_str());
    }
}

std::vector<double> ones_if_empty(std::vector<double> w, int n, const char* what) {
    if (w.empty()) return std::vector<double>(static_cast<std::size_t>(n), 1.0);
    if (static_cast<int>(w.size()) != n) {
        throw DimensionError(std::string(what) + ": weight count does not match rows");
    }
    return w;
}

}  // namespace

Graph::NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

Graph::Node& Graph::at(NodeId id) {
    if (id < 0 || id >= size()) throw IndexError("graph node id out of range");
    return nodes_[static_cast<std::size_t>(id)];
}

const Graph::Node& Graph::at(NodeId id) const {
    if (id < 0 || id >= size()) throw IndexError("graph node id out of range");
    return nodes_[static_cast<std::size_t>(id)];
}

std::vector<double>& Graph::grad_buf(Node& n) {
    if (n.grad.size() != static_cast<std::size_t>(n.out.numel())) {
        n.grad.assign(static_cast<std::size_t>(n.out.numel()), 0.0);
    }
    return n.grad;
}

const Tensor& Graph::value(NodeId id) const { return at(id).out; }

const std::vector<double>& Graph::node_grad(NodeId id) const {
    const Node& n = at(id);
    if (n.grad.empty()) throw ContractError("node has no gradient (backward not run?)");
    return n.grad;
}

Graph::NodeId Graph::param(Tensor& t) {
    for (const auto& [ptr, id] : registered_params_) {
        if (ptr == &t) return id;
    }
    Node n;
    n.op = Op::kParam;
    n.out = t;  // copy of the current values; backward targets the external tensor
    n.needs_grad = true;
    n.external = &t;
    NodeId id = push(std::move(n));
    registered_params_.emplace_back(&t, id);
    return id;
}

Graph::NodeId Graph::input(Tensor t) {
    Node n;
    n.op = Op::kInput;
    n.out = std::move(t);
    n.needs_grad = false;
    return push(std::move(n));
}

Graph::NodeId Graph::dense(NodeId x, NodeId w, NodeId bias) {
    const Tensor& xv = at(x).out;
    const Tensor& wv = at(w).out;
    const Tensor& bv = at(bias).out;
    check_rank(xv, 2, "dense input");
    check_rank(wv, 2, "dense weights");
    if (bv.rank() != 1) throw DimensionError("dense bias must be rank 1, got " + bv.shape_str());
    const int batch = xv.dim(0), in = xv.dim(1), out_dim = wv.dim(1);
    if (wv.dim(0) != in || bv.dim(0) != out_dim) {
        throw DimensionError("dense: incompatible shapes " + xv.shape_str() + " " +
                             wv.shape_str() + " " + bv.shape_str());
    }

    Node n;
    n.op = Op::kDense;
    n.in0 = x;
    n.in1 = w;
    n.in2 = bias;
    n.needs_grad = at(x).needs_grad || at(w).needs_grad || at(bias).needs_grad;
    n.out = Tensor({batch, out_dim});
    const double* xd = xv.data();
    const double* wd = wv.data();
    const double* bd = bv.data();
    double* od = n.out.data();
    for (int b = 0; b < batch; ++b) {
        for (int o = 0; o < out_dim; ++o) od[b * out_dim + o] = bd[o];
        for (int i = 0; i < in; ++i) {
            const double xv_bi = xd[b * in + i];
            const double* wrow = wd + i * out_dim;
            double* orow = od + b * out_dim;
            for (int o = 0; o < out_dim; ++o) orow[o] += xv_bi * wrow[o];
        }
    }
    return push(std::move(n));
}

Graph::NodeId Graph::conv2d(NodeId x, NodeId k, int stride) {
    const Tensor& xv = at(x).out;
    const Tensor& kv = at(k).out;
    check_rank(xv, 4, "conv2d input");
    check_rank(kv, 4, "conv2d kernels");
    if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
    const int batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int cout = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
    if (kv.dim(1) != cin) throw DimensionError("conv2d: channel mismatch");
    if (kh != kw) throw DimensionError("conv2d: kernels must be square");
    if (kh > h || kw > w) throw DimensionError("conv2d: kernel larger than input");
    const int oh = (h - kh) / stride + 1;
    const int ow = (w - kw) / stride + 1;

    Node n;
    n.op = Op::kConv2d;
    n.in0 = x;
    n.in1 = k;
    n.iarg = stride;
    n.needs_grad = at(x).needs_grad || at(k).needs_grad;
    n.out = Tensor({batch, cout, oh, ow});
    const double* xd = xv.data();
    const double* kd = kv.data();
    double* od = n.out.data();
#pragma omp parallel for schedule(static)
    for (int b = 0; b < batch; ++b) {
        for (int co = 0; co < cout; ++co) {
            double* oplane = od + (static_cast<long>(b) * cout + co) * oh * ow;
            for (int ci = 0; ci < cin; ++ci) {
                const double* xplane = xd + (static_cast<long>(b) * cin + ci) * h * w;
                const double* kplane = kd + (static_cast<long>(co) * cin + ci) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const double kval = kplane[ky * kw + kx];
                        for (int y = 0; y < oh; ++y) {
                            const double* xrow = xplane + (y * stride + ky) * w + kx;
                            double* orow = oplane + y * ow;
                            for (int xo = 0; xo < ow; ++xo) {
                                orow[xo] += kval * xrow[xo * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    return push(std::move(n));
}

Graph::NodeId Graph::relu(NodeId x) {
    const Tensor& xv = at(x).out;
    Node n;
    n.op = Op::kRelu;
    n.in0 = x;
    n.needs_grad = at(x).needs_grad;
    n.out = Tensor(xv.shape());
    const double* xd = xv.data();
    double* od = n.out.data();
    const int count = xv.numel();
    for (int i = 0; i < count; ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    return push(std::move(n));
}

Graph::NodeId Graph::max_pool2d(NodeId x, int window) {
    const Tensor& xv = at(x).out;
    check_rank(xv, 4, "max_pool2d input");
    if (window < 1) throw ParameterError("max_pool2d: window must be >= 1");
    const int batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (h % window != 0 || w % window != 0) {
        throw DimensionError("max_pool2d: window " + std::to_string(window) +
                             " does not divide spatial size of " + xv.shape_str());
    }
    const int oh = h / window, ow = w / window;

    Node n;
    n.op = Op::kMaxPool;
    n.in0 = x;
    n.iarg = window;
    n.needs_grad = at(x).needs_grad;
    n.out = Tensor({batch, ch, oh, ow});
    n.labels.assign(static_cast<std::size_t>(n.out.numel()), 0);  // flat argmax into input
    const double* xd = xv.data();
    double* od = n.out.data();
    int oi = 0;
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < ch; ++c) {
            const double* plane = xd + (static_cast<long>(b) * ch + c) * h * w;
            const long plane_off = (static_cast<long>(b) * ch + c) * h * w;
            for (int y = 0; y < oh; ++y) {
                for (int xo = 0; xo < ow; ++xo, ++oi) {
                    int best_idx = (y * window) * w + xo * window;
                    double best = plane[best_idx];
                    for (int dy = 0; dy < window; ++dy) {
                        for (int dx = 0; dx < window; ++dx) {
                            const int idx = (y * window + dy) * w + xo * window + dx;
                            if (plane[idx] > best) {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    od[oi] = best;
                    n.labels[static_cast<std::size_t>(oi)] = static_cast<int>(plane_off + best_idx);
                }
            }
        }
    }
    return push(std::move(n));
}

Graph::NodeId Graph::global_avg_pool(NodeId x) {
    const Tensor& xv = at(x).out;
    check_rank(xv, 4, "global_avg_pool input");
    const int batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Node n;
    n.op = Op::kGap;
    n.in0 = x;
    n.needs_grad = at(x).needs_grad;
    n.out = Tensor({batch, ch});
    const double* xd = xv.data();
    double* od = n.out.data();
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < ch; ++c) {
            const double* plane = xd + (static_cast<long>(b) * ch + c) * h * w;
            double acc = 0.0;
            for (int i = 0; i < h * w; ++i) acc += plane[i];
            od[b * ch + c] = acc * inv;
        }
    }
    return push(std::move(n));
}

Graph::NodeId Graph::softmax(NodeId logits) {
    const Tensor& xv = at(logits).out;
    check_rank(xv, 2, "softmax input");
    const int batch = xv.dim(0), classes = xv.dim(1);
    Node n;
    n.op = Op::kSoftmax;
    n.in0 = logits;
    n.needs_grad = at(logits).needs_grad;
    n.out = Tensor({batch, classes});
    const double* xd = xv.data();
    double* od = n.out.data();
    for (int b = 0; b < batch; ++b) {
        const double* row = xd + b * classes;
        double* orow = od + b * classes;
        double m = row[0];
        for (int c = 1; c < classes; ++c) m = std::max(m, row[c]);
        double sum = 0.0;
        for (int c = 0; c < classes; ++c) {
            orow[c] = std::exp(row[c] - m);
            sum += orow[c];
        }
        const double inv = 1.0 / sum;
        for (int c = 0; c < classes; ++c) orow[c] *= inv;
    }
    return push(std::move(n));
}

Graph::NodeId Graph::sigmoid(NodeId x, double clamp_eps) {
    const Tensor& xv = at(x).out;
    Node n;
    n.op = Op::kSigmoid;
    n.in0 = x;
    n.darg = clamp_eps;
    n.needs_grad = at(x).needs_grad;
    n.out = Tensor(xv.shape());
    const double* xd = xv.data();
    double* od = n.out.data();
    const int count = xv.numel();
    for (int i = 0; i < count; ++i) {
        double s;
        if (xd[i] >= 0.0) {
            s = 1.0 / (1.0 + std::exp(-xd[i]));
        } else {
            const double e = std::exp(xd[i]);
            s = e / (1.0 + e);
        }
        if (clamp_eps > 0.0) s = std::min(1.0 - clamp_eps, std::max(clamp_eps, s));
        od[i] = s;
    }
    return push(std::move(n));
}

Graph::NodeId Graph::softmax_cross_entropy(NodeId logits, std::vector<int> labels,
                                           std::vector<double> row_weights) {
    const Tensor& xv = at(logits).out;
    check_rank(xv, 2, "softmax_cross_entropy logits");
    const int batch = xv.dim(0), classes = xv.dim(1);
    if (static_cast<int>(labels.size()) != batch) {
        throw DimensionError("softmax_cross_entropy: label count does not match batch");
    }
    for (int y : labels) {
        if (y < 0 || y >= classes) {
            throw IndexError("softmax_cross_entropy: label " + std::to_string(y) +
                             " outside [0, " + std::to_string(classes) + ")");
        }
    }
    Node n;
    n.op = Op::kSoftmaxXent;
    n.in0 = logits;
    n.labels = std::move(labels);
    n.row_w = ones_if_empty(std::move(row_weights), batch, "softmax_cross_entropy");
    n.needs_grad = at(logits).needs_grad;
    n.aux.assign(static_cast<std::size_t>(batch) * classes, 0.0);  // softmax cache
    const double* xd = xv.data();
    double total = 0.0;
    for (int b = 0; b < batch; ++b) {
        const double* row = xd + b * classes;
        double* prow = n.aux.data() + b * classes;
        double m = row[0];
        for (int c = 1; c < classes; ++c) m = std::max(m, row[c]);
        double sum = 0.0;
        for (int c = 0; c < classes; ++c) {
            prow[c] = std::exp(row[c] - m);
            sum += prow[c];
        }
        const double inv = 1.0 / sum;
        for (int c = 0; c < classes; ++c) prow[c] *= inv;
        const double loss = std::log(sum) - (row[n.labels[static_cast<std::size_t>(b)]] - m);
        total += n.row_w[static_cast<std::size_t>(b)] * loss;
    }
    n.out = Tensor::scalar(total / batch);
    return push(std::move(n));
}

Graph::NodeId Graph::entropy_loss(NodeId probabilities, std::vector<double> row_weights,
                                  std::vector<double> class_weights) {
    const Tensor& pv = at(probabilities).out;
    check_rank(pv, 2, "entropy_loss input");
    const int batch = pv.dim(0), classes = pv.dim(1);
    if (!class_weights.empty() && static_cast<int>(class_weights.size()) != classes) {
        throw DimensionError("entropy_loss: class weight count does not match columns");
    }
    const double* pd = pv.data();
    for (int b = 0; b < batch; ++b) {
        double sum = 0.0;
        for (int c = 0; c < classes; ++c) {
            const double p = pd[b * classes + c];
            if (p < 0.0) throw ContractError("entropy_loss: negative probability");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            throw ContractError("entropy_loss: row " + std::to_string(b) +
                                " sums to " + std::to_string(sum));
        }
    }
    Node n;
    n.op = Op::kEntropy;
    n.in0 = probabilities;
    n.row_w = ones_if_empty(std::move(row_weights), batch, "entropy_loss");
    n.aux = std::move(class_weights);
    n.needs_grad = at(probabilities).needs_grad;
    double total = 0.0;
    for (int b = 0; b < batch; ++b) {
        double h = 0.0;
        for (int c = 0; c < classes; ++c) {
            const double p = pd[b * classes + c];
            if (p > 0.0) {
                const double cw = n.aux.empty() ? 1.0 : n.aux[static_cast<std::size_t>(c)];
                h -= cw * p * std::log(p);
            }
        }
        total += n.row_w[static_cast<std::size_t>(b)] * h;
    }
    n.out = Tensor::scalar(total / batch);
    return push(std::move(n));
}

Graph::NodeId Graph::binary_cross_entropy(NodeId prob, std::vector<int> domain_labels,
                                          std::vector<double> row_weights) {
    const Tensor& pv = at(prob).out;
    check_rank(pv, 2, "binary_cross_entropy input");
    if (pv.dim(1) != 1) {
        throw DimensionError("binary_cross_entropy: expected [batch x 1], got " + pv.shape_str());
    }
    const int batch = pv.dim(0);
    if (static_cast<int>(domain_labels.size()) != batch) {
        throw DimensionError("binary_cross_entropy: label count does not match batch");
    }
    for (int d : domain_labels) {
        if (d != 0 && d != 1) throw ParameterError("binary_cross_entropy: labels must be 0 or 1");
    }
    Node n;
    n.op = Op::kBce;
    n.in0 = prob;
    n.labels = std::move(domain_labels);
    n.row_w = ones_if_empty(std::move(row_weights), batch, "binary_cross_entropy");
    n.needs_grad = at(prob).needs_grad;
    n.aux.assign(static_cast<std::size_t>(batch), 0.0);  // clamped probs
    const double* pd = pv.data();
    double total = 0.0;
    for (int b = 0; b < batch; ++b) {
        const double p = std::min(1.0 - kBceClamp, std::max(kBceClamp, pd[b]));
        n.aux[static_cast<std::size_t>(b)] = p;
        const double ll =
            n.labels[static_cast<std::size_t>(b)] == 1 ? std::log(p) : std::log(1.0 - p);
        total -= n.row_w[static_cast<std::size_t>(b)] * ll;
    }
    n.out = Tensor::scalar(total / batch);
    return push(std::move(n));
}

Graph::NodeId Graph::gradient_reversal(NodeId x, double lambda) {
    if (lambda < 0.0) throw ParameterError("gradient_reversal: lambda must be nonnegative");
    Node n;
    n.op = Op::kGradRev;
    n.in0 = x;
    n.darg = lambda;
    n.needs_grad = at(x).needs_grad;
    n.out = at(x).out;  // identity forward, bit for bit
    return push(std::move(n));
}

Graph::NodeId Graph::adversarial_scale(NodeId x, double lambda) {
    if (lambda < 0.0) throw ParameterError("adversarial_scale: lambda must be nonnegative");
    const Tensor& xv = at(x).out;
    Node n;
    n.op = Op::kAdvScale;
    n.in0 = x;
    n.darg = lambda;
    n.needs_grad = at(x).needs_grad;
    n.out = Tensor(xv.shape());
    for (int i = 0; i < xv.numel(); ++i) n.out.data()[i] = lambda * xv.data()[i];
    return push(std::move(n));
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& av = at(a).out;
    const Tensor& bv = at(b).out;
    if (!av.same_shape(bv)) {
        throw DimensionError("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    }
    Node n;
    n.op = Op::kAdd;
    n.in0 = a;
    n.in1 = b;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.out = Tensor(av.shape());
    for (int i = 0; i < av.numel(); ++i) n.out.data()[i] = av.data()[i] + bv.data()[i];
    return push(std::move(n));
}

Graph::NodeId Graph::scale(NodeId x, double s) {
    const Tensor& xv = at(x).out;
    Node n;
    n.op = Op::kScale;
    n.in0 = x;
    n.darg = s;
    n.needs_grad = at(x).needs_grad;
    n.out = Tensor(xv.shape());
    for (int i = 0; i < xv.numel(); ++i) n.out.data()[i] = s * xv.data()[i];
    return push(std::move(n));
}

void Graph::backward(NodeId root) {
    if (backward_done_) {
        throw ContractError("backward already ran on this graph; build a new forward pass");
    }
    Node& r = at(root);
    if (r.out.numel() != 1) throw ParameterError("backward: root must be a scalar node");
    if (!r.needs_grad) {
        backward_done_ = true;
        return;  // nothing differentiable below the root
    }
    grad_buf(r)[0] = 1.0;
    for (int id = root; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad || n.grad.empty()) continue;
        backward_node(n);
    }
    backward_done_ = true;
}

void Graph::backward_node(Node& n) {
    const std::vector<double>& gy = n.grad;
    switch (n.op) {
        case Op::kParam: {
            n.external->ensure_grad();
            auto& pg = n.external->grad();
            for (std::size_t i = 0; i < gy.size(); ++i) pg[i] += gy[i];
            break;
        }
        case Op::kInput:
            break;
        case Op::kDense: {
            Node& xn = at(n.in0);
            Node& wn = at(n.in1);
            Node& bn = at(n.in2);
            const int batch = xn.out.dim(0), in = xn.out.dim(1), out_dim = wn.out.dim(1);
            const double* xd = xn.out.data();
            const double* wd = wn.out.data();
            if (xn.needs_grad) {
                auto& gx = grad_buf(xn);
                for (int b = 0; b < batch; ++b) {
                    const double* grow = gy.data() + b * out_dim;
                    for (int i = 0; i < in; ++i) {
                        const double* wrow = wd + i * out_dim;
                        double acc = 0.0;
                        for (int o = 0; o < out_dim; ++o) acc += grow[o] * wrow[o];
                        gx[static_cast<std::size_t>(b * in + i)] += acc;
                    }
                }
            }
            if (wn.needs_grad) {
                auto& gw = grad_buf(wn);
                for (int i = 0; i < in; ++i) {
                    double* gwrow = gw.data() + i * out_dim;
                    for (int b = 0; b < batch; ++b) {
                        const double xbi = xd[b * in + i];
                        const double* grow = gy.data() + b * out_dim;
                        for (int o = 0; o < out_dim; ++o) gwrow[o] += xbi * grow[o];
                    }
                }
            }
            if (bn.needs_grad) {
                auto& gb = grad_buf(bn);
                for (int b = 0; b < batch; ++b) {
                    const double* grow = gy.data() + b * out_dim;
                    for (int o = 0; o < out_dim; ++o) gb[static_cast<std::size_t>(o)] += grow[o];
                }
            }
            break;
        }
        case Op::kConv2d: {
            Node& xn = at(n.in0);
            Node& kn = at(n.in1);
            const int stride = n.iarg;
            const int batch = xn.out.dim(0), cin = xn.out.dim(1), h = xn.out.dim(2),
                      w = xn.out.dim(3);
            const int cout = kn.out.dim(0), kh = kn.out.dim(2), kw = kn.out.dim(3);
            const int oh = n.out.dim(2), ow = n.out.dim(3);
            const double* xd = xn.out.data();
            const double* kd = kn.out.data();
            if (xn.needs_grad) {
                auto& gx = grad_buf(xn);
#pragma omp parallel for schedule(static)
                for (int b = 0; b < batch; ++b) {
                    for (int co = 0; co < cout; ++co) {
                        const double* gplane =
                            gy.data() + (static_cast<long>(b) * cout + co) * oh * ow;
                        for (int ci = 0; ci < cin; ++ci) {
                            double* gxplane = gx.data() + (static_cast<long>(b) * cin + ci) * h * w;
                            const double* kplane =
                                kd + (static_cast<long>(co) * cin + ci) * kh * kw;
                            for (int ky = 0; ky < kh; ++ky) {
                                for (int kx = 0; kx < kw; ++kx) {
                                    const double kval = kplane[ky * kw + kx];
                                    for (int y = 0; y < oh; ++y) {
                                        double* gxrow = gxplane + (y * stride + ky) * w + kx;
                                        const double* grow = gplane + y * ow;
                                        for (int xo = 0; xo < ow; ++xo) {
                                            gxrow[xo * stride] += kval * grow[xo];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if (kn.needs_grad) {
                auto& gk = grad_buf(kn);
#pragma omp parallel for schedule(static)
                for (int co = 0; co < cout; ++co) {
                    for (int ci = 0; ci < cin; ++ci) {
                        double* gkplane = gk.data() + (static_cast<long>(co) * cin + ci) * kh * kw;
                        for (int b = 0; b < batch; ++b) {
                            const double* gplane =
                                gy.data() + (static_cast<long>(b) * cout + co) * oh * ow;
                            const double* xplane = xd + (static_cast<long>(b) * cin + ci) * h * w;
                            for (int ky = 0; ky < kh; ++ky) {
                                for (int kx = 0; kx < kw; ++kx) {
                                    double acc = 0.0;
                                    for (int y = 0; y < oh; ++y) {
                                        const double* xrow = xplane + (y * stride + ky) * w + kx;
                                        const double* grow = gplane + y * ow;
                                        for (int xo = 0; xo < ow; ++xo) {
                                            acc += xrow[xo * stride] * grow[xo];
                                        }
                                    }
                                    gkplane[ky * kw + kx] += acc;
                                }
                            }
                        }
                    }
                }
            }
            break;
        }
        case Op::kRelu: {
            Node& xn = at(n.in0);
            if (!xn.needs_grad) break;
            auto& gx = grad_buf(xn);
            const double* xd = xn.out.data();
            // subgradient at exactly 0 is 0
            for (std::size_t i = 0; i < gy.size(); ++i) {
                if (xd[i] > 0.0) gx[i] += gy[i];
            }
            break;
        }
        case Op::kMaxPool: {
            Node& xn = at(n.in0);
            if (!xn.needs_grad) break;
            auto& gx = grad_buf(xn);
            for (std::size_t i = 0; i < gy.size(); ++i) {
                gx[static_cast<std::size_t>(n.labels[i])] += gy[i];
            }
            break;
        }
        case Op::kGap: {
            Node& xn = at(n.in0);
            if (!xn.needs_grad) break;
            auto& gx = grad_buf(xn);
            const int h = xn.out.dim(2), w = xn.out.dim(3);
            const double inv = 1.0 / (static_cast<double>(h) * w);
            for (std::size_t bc = 0; bc < gy.size(); ++bc) {
                const double g = gy[bc] * inv;
                double* gxplane = gx.data() + bc * static_cast<std::size_t>(h) * w;
                for (int i = 0; i < h * w; ++i) gxplane[i] += g;
            }
            break;
        }
        case Op::kSoftmax: {
            Node& xn = at(n.in0);
            if (!xn.needs_grad) break;
            auto& gx = grad_buf(xn);
            const int batch = n.out.dim(0), classes = n.out.dim(1);
            const double* pd = n.out.data();
            for (int b = 0; b < batch; ++b) {
                const double* prow = pd + b * classes;
                const double* grow = gy.data() + b * classes;
                double dot = 0.0;
                for (int c = 0; c < classes; ++c) dot += grow[c] * prow[c];
                for (int c = 0; c < classes; ++c) {
                    gx[static_cast<std::size_t>(b * classes + c)] += prow[c] * (grow[c] - dot);
                }
            }
            break;
        }
        case Op::kSigmoid: {
            Node& xn = at(n.in0);
            if (!xn.needs_grad) break;
            auto& gx = grad_buf(xn);
            const double* sd = n.out.data();
            const double eps = n.darg;
            for (std::size_t i = 0; i < gy.size(); ++i) {
                const double s = sd[i];
                if (eps > 0.0 && (s <= eps || s >= 1.0 - eps)) continue;  // clamp is flat
                gx[i] += gy[i] * s * (1.0 - s);
            }
            break;
        }
        case Op::kSoftmaxXent: {
            Node& xn = at(n.in0);
            if (!xn.needs_grad) break;
            auto& gx = grad_buf(xn);
            const int batch = xn.out.dim(0), classes = xn.out.dim(1);
            const double g = gy[0] / batch;
            for (int b = 0; b < batch; ++b) {
                const double* prow = n.aux.data() + b * classes;
                const double wb = g * n.row_w[static_cast<std::size_t>(b)];
                const int y = n.labels[static_cast<std::size_t>(b)];
                for (int c = 0; c < classes; ++c) {
                    gx[static_cast<std::size_t>(b * classes + c)] +=
                        wb * (prow[c] - (c == y ? 1.0 : 0.0));
                }
            }
            break;
        }
        case Op::kEntropy: {
            Node& xn = at(n.in0);
            if (!xn.needs_grad) break;
            auto& gx = grad_buf(xn);
            const int batch = xn.out.dim(0), classes = xn.out.dim(1);
            const double* pd = xn.out.data();
            const double g = gy[0] / batch;
            for (int b = 0; b < batch; ++b) {
                const double wb = g * n.row_w[static_cast<std::size_t>(b)];
                for (int c = 0; c < classes; ++c) {
                    const double p = pd[b * classes + c];
                    if (p <= 0.0) continue;
                    const double cw = n.aux.empty() ? 1.0 : n.aux[static_cast<std::size_t>(c)];
                    gx[static_cast<std::size_t>(b * classes + c)] +=
                        wb * (-cw * (std::log(p) + 1.0));
                }
            }
            break;
        }
        case Op::kBce: {
            Node& xn = at(n.in0);
            if (!xn.needs_grad) break;
            auto& gx = grad_buf(xn);
            const int batch = xn.out.dim(0);
            const double* pd = xn.out.data();
            const double g = gy[0] / batch;
            for (int b = 0; b < batch; ++b) {
                const double raw = pd[b];
                if (raw < kBceClamp || raw > 1.0 - kBceClamp) continue;  // clamp is flat
                const double p = n.aux[static_cast<std::size_t>(b)];
                const double d = static_cast<double>(n.labels[static_cast<std::size_t>(b)]);
                gx[static_cast<std::size_t>(b)] +=
                    g * n.row_w[static_cast<std::size_t>(b)] * (p - d) / (p * (1.0 - p));
            }
            break;
        }
        case Op::kGradRev: {
            Node& xn = at(n.in0);
            if (!xn.needs_grad || n.darg == 0.0) break;
            auto& gx = grad_buf(xn);
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += -n.darg * gy[i];
            break;
        }
        case Op::kAdvScale: {
            Node& xn = at(n.in0);
            if (!xn.needs_grad) break;
            auto& gx = grad_buf(xn);
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += -gy[i];
            break;
        }
        case Op::kAdd: {
            Node& an = at(n.in0);
            Node& bn = at(n.in1);
            if (an.needs_grad) {
                auto& ga = grad_buf(an);
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
            }
            if (bn.needs_grad) {
                auto& gb = grad_buf(bn);
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
            }
            break;
        }
        case Op::kScale: {
            Node& xn = at(n.in0);
            if (!xn.needs_grad) break;
            auto& gx = grad_buf(xn);
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += n.darg * gy[i];
            break;
        }
    }
}

}  // namespace sspda
