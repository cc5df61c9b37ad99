#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mnn/common.hpp"

namespace mnn {

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    std::vector<TensorImplPtr> parents;
    std::function<void()> backward_fn;  // accumulates into parents' grads

    size_t size() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

// Value-semantics handle to a node of the computation graph. Leaf tensors
// with requires_grad=true are trainable parameters; ops build fresh nodes.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> data,
                       bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor uniform(std::vector<int> shape, double lo, double hi, Rng& rng,
                          bool requires_grad = false);
    static Tensor normal(std::vector<int> shape, double mean, double stddev, Rng& rng,
                         bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    size_t size() const { return impl_->data.size(); }
    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }
    std::vector<double>& grad() { return impl_->grad; }
    const std::vector<double>& grad() const { return impl_->grad; }
    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }
    void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

    // Value of a scalar (single-element) tensor.
    double item() const;

    TensorImpl* impl() const { return impl_.get(); }
    const TensorImplPtr& ptr() const { return impl_; }

  private:
    TensorImplPtr impl_;
};

// --- graph-building operations -------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// x [N,in] * w[out,in]^T -> [N,out]; the dense-layer kernel.
Tensor linear(const Tensor& x, const Tensor& w);
Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int padding);

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor mul(const Tensor& a, const Tensor& b);  // same shape, elementwise
Tensor affine(const Tensor& x, double scale, double shift);  // scale*x + shift
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);

Tensor add_bias(const Tensor& x, const Tensor& b);     // [N,F] + [F]
Tensor channel_scale(const Tensor& x, const Tensor& g);  // [N,F]*[F] or [N,C,H,W]*[C]

Tensor maxpool2d(const Tensor& x, int k);  // kernel k, stride k
Tensor reshape(const Tensor& x, std::vector<int> shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Batch-norm forward over [N,C,H,W] using batch statistics; writes the batch
// mean and biased variance per channel into batch_mean/batch_var.
Tensor batchnorm2d_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps, std::vector<double>& batch_mean,
                         std::vector<double>& batch_var);
// Inference-path batch norm: per-channel affine from fixed statistics.
// Not part of the autodiff graph.
Tensor batchnorm2d_eval(const Tensor& x, const std::vector<double>& gamma,
                        const std::vector<double>& beta,
                        const std::vector<double>& running_mean,
                        const std::vector<double>& running_var, double eps);

// Reverse-mode sweep from a scalar loss; fills grad of every reachable
// requires_grad tensor.
void backward(const Tensor& loss);

// v <- momentum*v + grad; p <- p - lr*v
void sgd_step(std::vector<Tensor>& params, double lr, double momentum,
              std::vector<std::vector<double>>& velocity);

// Same update with one learning rate per parameter tensor.
void sgd_step(std::vector<Tensor>& params, const std::vector<double>& lrs, double momentum,
              std::vector<std::vector<double>>& velocity);

}  // namespace mnn
