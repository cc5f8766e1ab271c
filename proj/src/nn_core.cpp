#include "perfact/nn_core.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <unordered_set>
#include <utility>

namespace perfact::nn {

namespace detail {

struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    std::vector<double> grad;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backprop;
    std::uint64_t id = 0;
};

}  // namespace detail

namespace {

using detail::Node;

std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
}

std::shared_ptr<Node> make_node(std::size_t rows, std::size_t cols, std::vector<double> values,
                                std::vector<std::shared_ptr<Node>> inputs = {},
                                std::function<void(Node&)> backprop = nullptr) {
    auto node = std::make_shared<Node>();
    node->rows = rows;
    node->cols = cols;
    node->values = std::move(values);
    node->inputs = std::move(inputs);
    node->backprop = std::move(backprop);
    node->id = next_id();
    return node;
}

std::vector<double>& grad_of(Node& n) {
    if (n.grad.size() != n.values.size()) n.grad.assign(n.values.size(), 0.0);
    return n.grad;
}

void want_defined(const Tensor& t) {
    if (!t.defined()) throw ShapeMismatch("operation on an undefined tensor");
}

void want_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeMismatch(std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
}

constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

}  // namespace

Tensor Tensor::leaf(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols)
        throw ShapeMismatch("leaf: " + std::to_string(values.size()) + " values for " +
                            std::to_string(rows) + "x" + std::to_string(cols));
    return Tensor(make_node(rows, cols, std::move(values)));
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
    return Tensor(make_node(rows, cols, std::vector<double>(rows * cols, 0.0)));
}

Tensor Tensor::scalar(double v) { return Tensor(make_node(1, 1, {v})); }

std::size_t Tensor::rows() const { return node_ ? node_->rows : 0; }
std::size_t Tensor::cols() const { return node_ ? node_->cols : 0; }
std::size_t Tensor::size() const { return node_ ? node_->values.size() : 0; }

const std::vector<double>& Tensor::values() const {
    want_defined(*this);
    return node_->values;
}

std::vector<double>& Tensor::values_mut() {
    want_defined(*this);
    return node_->values;
}

const std::vector<double>& Tensor::grad() const {
    want_defined(*this);
    return grad_of(*node_);
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->values.size(); }

void Tensor::clear_grad() {
    if (node_) node_->grad.clear();
}

double Tensor::item() const {
    want_defined(*this);
    if (node_->values.size() != 1) throw ShapeMismatch("item() on a non-scalar tensor");
    return node_->values[0];
}

std::uint64_t Tensor::id() const { return node_ ? node_->id : 0; }

Tensor add(const Tensor& a, const Tensor& b) {
    want_defined(a);
    want_defined(b);
    want_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return Tensor(make_node(a.rows(), a.cols(), std::move(out), {a.node(), b.node()},
                            [](Node& self) {
                                auto& ga = grad_of(*self.inputs[0]);
                                auto& gb = grad_of(*self.inputs[1]);
                                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                    ga[i] += self.grad[i];
                                    gb[i] += self.grad[i];
                                }
                            }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    want_defined(a);
    want_defined(b);
    want_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return Tensor(make_node(a.rows(), a.cols(), std::move(out), {a.node(), b.node()},
                            [](Node& self) {
                                auto& ga = grad_of(*self.inputs[0]);
                                auto& gb = grad_of(*self.inputs[1]);
                                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                    ga[i] += self.grad[i];
                                    gb[i] -= self.grad[i];
                                }
                            }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    want_defined(a);
    want_defined(b);
    want_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return Tensor(make_node(a.rows(), a.cols(), std::move(out), {a.node(), b.node()},
                            [](Node& self) {
                                Node& na = *self.inputs[0];
                                Node& nb = *self.inputs[1];
                                auto& ga = grad_of(na);
                                auto& gb = grad_of(nb);
                                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                    ga[i] += self.grad[i] * nb.values[i];
                                    gb[i] += self.grad[i] * na.values[i];
                                }
                            }));
}

Tensor scale(const Tensor& a, double factor) {
    want_defined(a);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
    return Tensor(make_node(a.rows(), a.cols(), std::move(out), {a.node()},
                            [factor](Node& self) {
                                auto& ga = grad_of(*self.inputs[0]);
                                for (std::size_t i = 0; i < self.grad.size(); ++i)
                                    ga[i] += self.grad[i] * factor;
                            }));
}

Tensor add_row(const Tensor& mat, const Tensor& row) {
    want_defined(mat);
    want_defined(row);
    if (row.rows() != 1 || row.cols() != mat.cols())
        throw ShapeMismatch("add_row: row is " + std::to_string(row.rows()) + "x" +
                            std::to_string(row.cols()) + " against " + std::to_string(mat.cols()) +
                            " columns");
    std::vector<double> out(mat.size());
    const std::size_t c = mat.cols();
    for (std::size_t r = 0; r < mat.rows(); ++r)
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] = mat.values()[r * c + j] + row.values()[j];
    return Tensor(make_node(mat.rows(), mat.cols(), std::move(out), {mat.node(), row.node()},
                            [](Node& self) {
                                auto& gm = grad_of(*self.inputs[0]);
                                auto& gr = grad_of(*self.inputs[1]);
                                const std::size_t cols = self.cols;
                                for (std::size_t r = 0; r < self.rows; ++r)
                                    for (std::size_t j = 0; j < cols; ++j) {
                                        gm[r * cols + j] += self.grad[r * cols + j];
                                        gr[j] += self.grad[r * cols + j];
                                    }
                            }));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    want_defined(a);
    want_defined(b);
    if (a.cols() != b.rows())
        throw ShapeMismatch("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                            " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a.values()[i * k + kk];
            if (av == 0.0) continue;
            const double* brow = b.values().data() + kk * n;
            double* orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    return Tensor(make_node(m, n, std::move(out), {a.node(), b.node()}, [](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        auto& ga = grad_of(na);
        auto& gb = grad_of(nb);
        const std::size_t m2 = na.rows, k2 = na.cols, n2 = nb.cols;
        for (std::size_t i = 0; i < m2; ++i)
            for (std::size_t j = 0; j < n2; ++j) {
                const double g = self.grad[i * n2 + j];
                if (g == 0.0) continue;
                for (std::size_t kk = 0; kk < k2; ++kk) {
                    ga[i * k2 + kk] += g * nb.values[kk * n2 + j];
                    gb[kk * n2 + j] += g * na.values[i * k2 + kk];
                }
            }
    }));
}

Tensor transpose(const Tensor& a) {
    want_defined(a);
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.values()[i * c + j];
    return Tensor(make_node(c, r, std::move(out), {a.node()}, [](Node& self) {
        Node& na = *self.inputs[0];
        auto& ga = grad_of(na);
        for (std::size_t i = 0; i < na.rows; ++i)
            for (std::size_t j = 0; j < na.cols; ++j) ga[i * na.cols + j] += self.grad[j * na.rows + i];
    }));
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows of nothing");
    const std::size_t c = parts[0].cols();
    std::size_t r = 0;
    std::vector<std::shared_ptr<Node>> inputs;
    for (const Tensor& p : parts) {
        want_defined(p);
        if (p.cols() != c) throw ShapeMismatch("concat_rows: column mismatch");
        r += p.rows();
        inputs.push_back(p.node());
    }
    std::vector<double> out;
    out.reserve(r * c);
    for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return Tensor(make_node(r, c, std::move(out), std::move(inputs), [](Node& self) {
        std::size_t at = 0;
        for (auto& in : self.inputs) {
            auto& gi = grad_of(*in);
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[at + i];
            at += gi.size();
        }
    }));
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols of nothing");
    const std::size_t r = parts[0].rows();
    std::size_t c = 0;
    std::vector<std::shared_ptr<Node>> inputs;
    for (const Tensor& p : parts) {
        want_defined(p);
        if (p.rows() != r) throw ShapeMismatch("concat_cols: row mismatch");
        c += p.cols();
        inputs.push_back(p.node());
    }
    std::vector<double> out(r * c);
    std::size_t at = 0;
    for (const Tensor& p : parts) {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j)
                out[i * c + at + j] = p.values()[i * p.cols() + j];
        at += p.cols();
    }
    return Tensor(make_node(r, c, std::move(out), std::move(inputs), [](Node& self) {
        std::size_t start = 0;
        for (auto& in : self.inputs) {
            auto& gi = grad_of(*in);
            const std::size_t pc = in->cols;
            for (std::size_t i = 0; i < in->rows; ++i)
                for (std::size_t j = 0; j < pc; ++j)
                    gi[i * pc + j] += self.grad[i * self.cols + start + j];
            start += pc;
        }
    }));
}

Tensor row_slice(const Tensor& a, std::size_t r0, std::size_t r1) {
    want_defined(a);
    if (r0 >= r1 || r1 > a.rows()) throw ShapeMismatch("row_slice out of range");
    const std::size_t c = a.cols();
    std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(r0 * c),
                            a.values().begin() + static_cast<std::ptrdiff_t>(r1 * c));
    return Tensor(make_node(r1 - r0, c, std::move(out), {a.node()}, [r0](Node& self) {
        auto& ga = grad_of(*self.inputs[0]);
        const std::size_t c2 = self.cols;
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[r0 * c2 + i] += self.grad[i];
    }));
}

Tensor col_slice(const Tensor& a, std::size_t c0, std::size_t c1) {
    want_defined(a);
    if (c0 >= c1 || c1 > a.cols()) throw ShapeMismatch("col_slice out of range");
    const std::size_t r = a.rows(), c = a.cols(), w = c1 - c0;
    std::vector<double> out(r * w);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.values()[i * c + c0 + j];
    return Tensor(make_node(r, w, std::move(out), {a.node()}, [c0](Node& self) {
        Node& na = *self.inputs[0];
        auto& ga = grad_of(na);
        for (std::size_t i = 0; i < self.rows; ++i)
            for (std::size_t j = 0; j < self.cols; ++j)
                ga[i * na.cols + c0 + j] += self.grad[i * self.cols + j];
    }));
}

Tensor sum(const Tensor& a) {
    want_defined(a);
    double total = 0.0;
    for (double v : a.values()) total += v;
    return Tensor(make_node(1, 1, {total}, {a.node()}, [](Node& self) {
        auto& ga = grad_of(*self.inputs[0]);
        for (double& g : ga) g += self.grad[0];
    }));
}

Tensor softmax_rows(const Tensor& a) {
    want_defined(a);
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, a.values()[i * c + j]);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = std::exp(a.values()[i * c + j] - mx);
            total += out[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
    }
    return Tensor(make_node(r, c, std::move(out), {a.node()}, [](Node& self) {
        auto& ga = grad_of(*self.inputs[0]);
        const std::size_t c2 = self.cols;
        for (std::size_t i = 0; i < self.rows; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c2; ++j)
                dot += self.grad[i * c2 + j] * self.values[i * c2 + j];
            for (std::size_t j = 0; j < c2; ++j)
                ga[i * c2 + j] += self.values[i * c2 + j] * (self.grad[i * c2 + j] - dot);
        }
    }));
}

Tensor gelu(const Tensor& a) {
    want_defined(a);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.values()[i];
        out[i] = x * 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    }
    return Tensor(make_node(a.rows(), a.cols(), std::move(out), {a.node()}, [](Node& self) {
        Node& na = *self.inputs[0];
        auto& ga = grad_of(na);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = na.values[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            ga[i] += self.grad[i] * (cdf + x * pdf);
        }
    }));
}

Tensor tanh_op(const Tensor& a) {
    want_defined(a);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.values()[i]);
    return Tensor(make_node(a.rows(), a.cols(), std::move(out), {a.node()}, [](Node& self) {
        auto& ga = grad_of(*self.inputs[0]);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            ga[i] += self.grad[i] * (1.0 - self.values[i] * self.values[i]);
    }));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    want_defined(x);
    want_defined(gamma);
    want_defined(beta);
    if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
        beta.cols() != x.cols())
        throw ShapeMismatch("layer_norm: gain/bias must be 1x" + std::to_string(x.cols()));
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(r * c);
    std::vector<double> inv_std(r);
    std::vector<double> mean(r);
    for (std::size_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += x.values()[i * c + j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = x.values()[i * c + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        mean[i] = mu;
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            const double xhat = (x.values()[i * c + j] - mu) * inv_std[i];
            out[i * c + j] = xhat * gamma.values()[j] + beta.values()[j];
        }
    }
    return Tensor(make_node(
        r, c, std::move(out), {x.node(), gamma.node(), beta.node()},
        [mean = std::move(mean), inv_std = std::move(inv_std)](Node& self) {
            Node& nx = *self.inputs[0];
            Node& ng = *self.inputs[1];
            auto& gx = grad_of(nx);
            auto& gg = grad_of(ng);
            auto& gb = grad_of(*self.inputs[2]);
            const std::size_t c2 = self.cols;
            for (std::size_t i = 0; i < self.rows; ++i) {
                double mean_gh = 0.0;
                double mean_ghx = 0.0;
                for (std::size_t j = 0; j < c2; ++j) {
                    const double xhat = (nx.values[i * c2 + j] - mean[i]) * inv_std[i];
                    const double g = self.grad[i * c2 + j];
                    const double gh = g * ng.values[j];
                    gg[j] += g * xhat;
                    gb[j] += g;
                    mean_gh += gh;
                    mean_ghx += gh * xhat;
                }
                mean_gh /= static_cast<double>(c2);
                mean_ghx /= static_cast<double>(c2);
                for (std::size_t j = 0; j < c2; ++j) {
                    const double xhat = (nx.values[i * c2 + j] - mean[i]) * inv_std[i];
                    const double gh = self.grad[i * c2 + j] * ng.values[j];
                    gx[i * c2 + j] += inv_std[i] * (gh - mean_gh - xhat * mean_ghx);
                }
            }
        }));
}

Tensor block_max_rows(const Tensor& x, std::size_t block) {
    want_defined(x);
    if (block == 0 || x.rows() % block != 0)
        throw ShapeMismatch("block_max_rows: " + std::to_string(x.rows()) + " rows not divisible by " +
                            std::to_string(block));
    const std::size_t groups = x.rows() / block, c = x.cols();
    std::vector<double> out(groups * c, -std::numeric_limits<double>::infinity());
    std::vector<std::size_t> argmax(groups * c, 0);
    for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t b = 0; b < block; ++b) {
            const std::size_t row = g * block + b;
            for (std::size_t j = 0; j < c; ++j) {
                const double v = x.values()[row * c + j];
                if (v > out[g * c + j]) {
                    out[g * c + j] = v;
                    argmax[g * c + j] = row;
                }
            }
        }
    return Tensor(make_node(groups, c, std::move(out), {x.node()},
                            [argmax = std::move(argmax)](Node& self) {
                                auto& gx = grad_of(*self.inputs[0]);
                                const std::size_t c2 = self.cols;
                                for (std::size_t i = 0; i < self.grad.size(); ++i)
                                    gx[argmax[i] * c2 + (i % c2)] += self.grad[i];
                            }));
}

Tensor positional_encoding(std::size_t len, std::size_t width) {
    if (width % 2 != 0) throw OddWidth("positional encoding width " + std::to_string(width));
    std::vector<double> out(len * width);
    for (std::size_t pos = 0; pos < len; ++pos)
        for (std::size_t i = 0; i * 2 < width; ++i) {
            const double rate =
                std::pow(10000.0, -(2.0 * static_cast<double>(i)) / static_cast<double>(width));
            out[pos * width + 2 * i] = std::sin(static_cast<double>(pos) * rate);
            out[pos * width + 2 * i + 1] = std::cos(static_cast<double>(pos) * rate);
        }
    return Tensor::leaf(len, width, std::move(out));
}

void backward(const Tensor& loss) {
    want_defined(loss);
    if (loss.size() != 1)
        throw NonScalarLoss("loss has shape " + std::to_string(loss.rows()) + "x" +
                            std::to_string(loss.cols()));
    if (!std::isfinite(loss.item())) throw NaNDetected("loss is not finite");

    // iterative post-order: inputs first, then the node
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* in = node->inputs[next++].get();
            if (seen.insert(in).second) stack.push_back({in, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    grad_of(*loss.node())[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backprop) {
            grad_of(*node);
            node->backprop(*node);
        }
    }
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_row(matmul(x, w), b);
}

Tensor mha(const Tensor& x_q, const Tensor& x_kv, const AttentionWeights& w, int heads) {
    const std::size_t width = w.wq.cols();
    if (heads <= 0 || width % static_cast<std::size_t>(heads) != 0)
        throw ShapeMismatch("width " + std::to_string(width) + " not divisible by " +
                            std::to_string(heads) + " heads");
    const std::size_t dh = width / static_cast<std::size_t>(heads);
    const Tensor q = linear(x_q, w.wq, w.bq);
    const Tensor k = linear(x_kv, w.wk, w.bk);
    const Tensor v = linear(x_kv, w.wv, w.bv);
    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const std::size_t c0 = static_cast<std::size_t>(h) * dh;
        const Tensor qs = col_slice(q, c0, c0 + dh);
        const Tensor ks = col_slice(k, c0, c0 + dh);
        const Tensor vs = col_slice(v, c0, c0 + dh);
        const Tensor scores = scale(matmul(qs, transpose(ks)), 1.0 / std::sqrt(static_cast<double>(dh)));
        outs.push_back(matmul(softmax_rows(scores), vs));
    }
    return linear(concat_cols(outs), w.wo, w.bo);
}

Tensor mhsa(const Tensor& x, const AttentionWeights& w, int heads) { return mha(x, x, w, heads); }

Tensor encoder_layer(const Tensor& x, const EncoderLayerWeights& w, int heads) {
    const Tensor x1 = add(x, mhsa(layer_norm(x, w.ln1_g, w.ln1_b), w.attn, heads));
    const Tensor ff = linear(gelu(linear(layer_norm(x1, w.ln2_g, w.ln2_b), w.ff_w1, w.ff_b1)),
                             w.ff_w2, w.ff_b2);
    return add(x1, ff);
}

Tensor decoder_layer(const Tensor& q, const Tensor& memory, const DecoderLayerWeights& w,
                     int heads) {
    const Tensor q1 = add(q, mhsa(layer_norm(q, w.ln1_g, w.ln1_b), w.self_attn, heads));
    const Tensor q2 = add(q1, mha(layer_norm(q1, w.ln2_g, w.ln2_b), memory, w.cross_attn, heads));
    const Tensor ff = linear(gelu(linear(layer_norm(q2, w.ln3_g, w.ln3_b), w.ff_w1, w.ff_b1)),
                             w.ff_w2, w.ff_b2);
    return add(q2, ff);
}

std::vector<std::size_t> fps_indices(std::span<const geom::Vec3> cloud, std::size_t k,
                                     std::uint64_t seed) {
    const std::size_t n = cloud.size();
    if (k > n)
        throw TooFewPoints("asked for " + std::to_string(k) + " centroids from " +
                           std::to_string(n) + " points");
    std::vector<std::size_t> picked;
    if (k == 0) return picked;
    picked.reserve(k);
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    std::size_t at = static_cast<std::size_t>(seed % n);
    picked.push_back(at);
    while (picked.size() < k) {
        const geom::Vec3& p = cloud[at];
        std::size_t far = 0;
        double far_d2 = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dx = cloud[i].x - p.x;
            const double dy = cloud[i].y - p.y;
            const double dz = cloud[i].z - p.z;
            min_d2[i] = std::min(min_d2[i], dx * dx + dy * dy + dz * dz);
            if (min_d2[i] > far_d2) {
                far_d2 = min_d2[i];
                far = i;
            }
        }
        at = far;
        picked.push_back(at);
    }
    return picked;
}

Tensor set_abstraction(std::span<const geom::Vec3> cloud, std::size_t k, double radius,
                       std::size_t samples, const SetAbstractionWeights& w, std::uint64_t seed) {
    if (samples == 0) throw ShapeMismatch("set_abstraction: zero samples per ball");
    const std::vector<std::size_t> centroids = fps_indices(cloud, k, seed);
    const double r2 = radius * radius;
    std::vector<double> pts;
    pts.reserve(k * samples * 3);
    for (std::size_t c : centroids) {
        const geom::Vec3& ctr = cloud[c];
        std::size_t got = 0;
        for (std::size_t i = 0; i < cloud.size() && got < samples; ++i) {
            const double dx = cloud[i].x - ctr.x;
            const double dy = cloud[i].y - ctr.y;
            const double dz = cloud[i].z - ctr.z;
            if (dx * dx + dy * dy + dz * dz > r2) continue;
            pts.insert(pts.end(), {cloud[i].x, cloud[i].y, cloud[i].z});
            ++got;
        }
        for (; got < samples; ++got) pts.insert(pts.end(), {ctr.x, ctr.y, ctr.z});
    }
    Tensor x = Tensor::leaf(k * samples, 3, std::move(pts));
    for (std::size_t layer = 0; layer < w.mlp_w.size(); ++layer)
        x = gelu(linear(x, w.mlp_w[layer], w.mlp_b[layer]));
    return linear(block_max_rows(x, samples), w.out_w, w.out_b);
}

std::size_t parameter_count(const ModelParams& params) {
    std::size_t total = 0;
    for (const auto& [name, t] : params.tensors) total += t.size();
    return total;
}

void zero_grad(ModelParams& params) {
    for (auto& [name, t] : params.tensors) t.clear_grad();
}

void adam_step(ModelParams& params, AdamState& state, double lr, double beta1, double beta2,
               double eps) {
    state.step += 1;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (auto& [name, t] : params.tensors) {
        auto& vals = t.values_mut();
        auto [it, inserted] = state.moments.try_emplace(name);
        auto& [m, v] = it->second;
        if (inserted) {
            m.assign(vals.size(), 0.0);
            v.assign(vals.size(), 0.0);
        }
        const bool has = t.has_grad();
        const std::vector<double>& g = t.grad();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double gi = has ? g[i] : 0.0;
            if (!std::isfinite(gi)) throw NaNDetected("gradient for " + name);
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            vals[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

constexpr char kCheckpointMagic[4] = {'P', 'F', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_i32(std::ostream& out, std::int32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_entry(std::ostream& out, const std::string& name, std::size_t rows, std::size_t cols,
               const std::vector<double>& values) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(rows));
    put_u32(out, static_cast<std::uint32_t>(cols));
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
}

struct Reader {
    std::string buf;
    std::size_t at = 0;
    std::string path;

    bool can_read(std::size_t n) const { return at + n <= buf.size(); }

    template <typename T>
    T take() {
        if (!can_read(sizeof(T))) throw CorruptIndex(path + ": truncated");
        T v;
        std::memcpy(&v, buf.data() + at, sizeof(T));
        at += sizeof(T);
        return v;
    }

    std::string take_string() {
        const std::uint32_t n = take<std::uint32_t>();
        if (!can_read(n)) throw CorruptIndex(path + ": truncated");
        std::string s = buf.substr(at, n);
        at += n;
        return s;
    }

    std::vector<double> take_f64(std::size_t n) {
        if (!can_read(n * sizeof(double))) throw CorruptIndex(path + ": truncated");
        std::vector<double> v(n);
        std::memcpy(v.data(), buf.data() + at, n * sizeof(double));
        at += n * sizeof(double);
        return v;
    }
};

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path, const AdamState* opt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(kCheckpointMagic, 4);
    put_u32(out, kCheckpointVersion);
    const Hyper& h = params.hyper;
    for (int field : {h.hidden, h.heads, h.ff, h.unimodal_layers, h.fusion_layers, h.fusion_tokens,
                      h.decoder_layers, h.chunk, h.robot_tokens, h.scene_tokens, h.dof, h.mode})
        put_i32(out, field);
    put_u64(out, params.init_seed);

    std::uint64_t entries = params.tensors.size();
    if (opt) entries += 2 * opt->moments.size() + 1;
    put_u64(out, entries);
    for (const auto& [name, t] : params.tensors) put_entry(out, name, t.rows(), t.cols(), t.values());
    if (opt) {
        for (const auto& [name, mv] : opt->moments) {
            put_entry(out, "opt.m/" + name, 1, mv.first.size(), mv.first);
            put_entry(out, "opt.v/" + name, 1, mv.second.size(), mv.second);
        }
        put_entry(out, "opt.step", 1, 1, {static_cast<double>(opt->step)});
    }
    if (!out) throw IoError("write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path, AdamState* opt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    Reader r;
    r.path = path;
    r.buf.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (!r.can_read(4) || std::memcmp(r.buf.data(), kCheckpointMagic, 4) != 0)
        throw FormatError(path + ": not a checkpoint");
    r.at = 4;
    const std::uint32_t version = r.take<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw VersionMismatch(path + ": checkpoint version " + std::to_string(version) +
                              ", expected " + std::to_string(kCheckpointVersion));
    ModelParams params;
    Hyper& h = params.hyper;
    for (int* field : {&h.hidden, &h.heads, &h.ff, &h.unimodal_layers, &h.fusion_layers,
                       &h.fusion_tokens, &h.decoder_layers, &h.chunk, &h.robot_tokens,
                       &h.scene_tokens, &h.dof, &h.mode})
        *field = r.take<std::int32_t>();
    params.init_seed = r.take<std::uint64_t>();

    const std::uint64_t entries = r.take<std::uint64_t>();
    for (std::uint64_t e = 0; e < entries; ++e) {
        const std::string name = r.take_string();
        const std::uint32_t rows = r.take<std::uint32_t>();
        const std::uint32_t cols = r.take<std::uint32_t>();
        std::vector<double> values = r.take_f64(static_cast<std::size_t>(rows) * cols);
        if (name == "opt.step") {
            if (opt) opt->step = static_cast<std::int64_t>(values[0]);
        } else if (name.starts_with("opt.m/")) {
            if (opt) opt->moments[name.substr(6)].first = std::move(values);
        } else if (name.starts_with("opt.v/")) {
            if (opt) opt->moments[name.substr(6)].second = std::move(values);
        } else {
            params.tensors.emplace(name, Tensor::leaf(rows, cols, std::move(values)));
        }
    }
    return params;
}

}  // namespace perfact::nn
