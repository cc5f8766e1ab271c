#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "perfact/errors.hpp"
#include "perfact/geom.hpp"

namespace perfact::nn {

struct NonScalarLoss : Error {
    explicit NonScalarLoss(const std::string& msg) : Error("NonScalarLoss", msg) {}
};

struct NaNDetected : Error {
    explicit NaNDetected(const std::string& msg) : Error("NaNDetected", msg) {}
};

struct OddWidth : Error {
    explicit OddWidth(const std::string& msg) : Error("OddWidth", msg) {}
};

struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& msg) : Error("ShapeMismatch", msg) {}
};

struct TooFewPoints : Error {
    explicit TooFewPoints(const std::string& msg) : Error("TooFewPoints", msg) {}
};

namespace detail {
struct Node;
}

// Dense row-major 2D tensor with a reverse-mode gradient slot. Handles share
// the underlying node; graphs are built by the free-function ops below.
class Tensor {
  public:
    Tensor() = default;

    static Tensor leaf(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor zeros(std::size_t rows, std::size_t cols);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    std::size_t rows() const;
    std::size_t cols() const;
    std::size_t size() const;
    const std::vector<double>& values() const;
    std::vector<double>& values_mut();  // leaves only; rewires nothing
    const std::vector<double>& grad() const;
    bool has_grad() const;
    void clear_grad();
    double item() const;
    std::uint64_t id() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  private:
    std::shared_ptr<detail::Node> node_;
};

// elementwise and shape ops
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_row(const Tensor& mat, const Tensor& row);  // broadcast a 1xC row
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor row_slice(const Tensor& a, std::size_t r0, std::size_t r1);
Tensor col_slice(const Tensor& a, std::size_t c0, std::size_t c1);
Tensor sum(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// max over each block of `block` consecutive rows, channel-wise; grads route
// to the argmax row (lowest index on ties)
Tensor block_max_rows(const Tensor& x, std::size_t block);

// PE(pos, 2i) = sin(pos / 10000^(2i/width)), PE(pos, 2i+1) = cos(same)
Tensor positional_encoding(std::size_t len, std::size_t width);

// Reverse-mode accumulation into every reachable leaf's grad slot.
void backward(const Tensor& loss);

struct AttentionWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

// Scaled dot-product multi-head attention; queries from x_q, keys and values
// from x_kv. No masking (the decoder is non-autoregressive).
Tensor mha(const Tensor& x_q, const Tensor& x_kv, const AttentionWeights& w, int heads);
Tensor mhsa(const Tensor& x, const AttentionWeights& w, int heads);

struct EncoderLayerWeights {
    Tensor ln1_g, ln1_b;
    AttentionWeights attn;
    Tensor ln2_g, ln2_b;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

struct DecoderLayerWeights {
    Tensor ln1_g, ln1_b;
    AttentionWeights self_attn;
    Tensor ln2_g, ln2_b;
    AttentionWeights cross_attn;
    Tensor ln3_g, ln3_b;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// pre-norm blocks: x + attn(ln(x)), then x + ff(ln(x))
Tensor encoder_layer(const Tensor& x, const EncoderLayerWeights& w, int heads);
Tensor decoder_layer(const Tensor& q, const Tensor& memory, const DecoderLayerWeights& w,
                     int heads);

// Farthest-point sampling: start at seed % n, then repeatedly take the point
// farthest from the chosen set, lowest index on ties.
std::vector<std::size_t> fps_indices(std::span<const geom::Vec3> cloud, std::size_t k,
                                     std::uint64_t seed);

struct SetAbstractionWeights {
    std::vector<Tensor> mlp_w;  // shared per-point MLP
    std::vector<Tensor> mlp_b;
    Tensor out_w, out_b;  // final projection to the model width
};

// FPS centroids, ball query of at most `samples` neighbors within `radius`
// (padded by repeating the centroid), shared per-point MLP on absolute
// coordinates, channel-wise max pool, linear projection. Returns k x H.
Tensor set_abstraction(std::span<const geom::Vec3> cloud, std::size_t k, double radius,
                       std::size_t samples, const SetAbstractionWeights& w,
                       std::uint64_t seed = 0);

struct Hyper {
    int hidden = 128;
    int heads = 8;
    int ff = 1024;
    int unimodal_layers = 3;
    int fusion_layers = 3;
    int fusion_tokens = 4;
    int decoder_layers = 6;
    int chunk = 10;
    int robot_tokens = 256;
    int scene_tokens = 2048;
    int dof = 6;
    int mode = 0;

    bool operator==(const Hyper&) const = default;
};

struct ModelParams {
    Hyper hyper;
    std::uint64_t init_seed = 0;
    std::map<std::string, Tensor> tensors;
};

std::size_t parameter_count(const ModelParams& params);
void zero_grad(ModelParams& params);

struct AdamState {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
    std::int64_t step = 0;
};

void adam_step(ModelParams& params, AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

// checkpoint files: magic PFCK, version, hyper record, then (name, shape, f64
// payload) entries; optimizer moments ride along under the opt. prefix
void save_checkpoint(const ModelParams& params, const std::string& path,
                     const AdamState* opt = nullptr);
ModelParams load_checkpoint(const std::string& path, AdamState* opt = nullptr);

}  // namespace perfact::nn
