#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dras/nn/layers.hpp"

namespace dras::nn {

// Per-layer, per-parameter gradient buffers. Frozen layers hold no buffers.
template <typename Scalar>
using Gradients = std::vector<std::vector<Matrix<Scalar>>>;

template <typename Scalar>
class Network {
 public:
  // Activations recorded by a forward pass; acts[0] is the input.
  struct Trace {
    std::vector<Tensor<Scalar>> acts;
  };

  Network() = default;
  Network(const Network& o) : first_trainable_(o.first_trainable_) {
    layers_.reserve(o.layers_.size());
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  Network& operator=(const Network& o) {
    if (this != &o) {
      Network tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  template <typename L, typename... Args>
  Network& emplace(Args&&... args) {
    layers_.push_back(std::make_unique<L>(std::forward<Args>(args)...));
    return *this;
  }

  std::size_t depth() const { return layers_.size(); }
  Layer<Scalar>& layer(std::size_t i) { return *layers_[i]; }
  const Layer<Scalar>& layer(std::size_t i) const { return *layers_[i]; }

  // Layers below `first` are frozen: they never receive parameter gradients.
  void freeze_below(std::size_t first) { first_trainable_ = first; }
  std::size_t first_trainable() const { return first_trainable_; }
  bool trainable(std::size_t layer) const { return layer >= first_trainable_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) const {
    Tensor<Scalar> cur = x;
    for (const auto& l : layers_) cur = l->forward(cur);
    return cur;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Trace& trace) const {
    trace.acts.clear();
    trace.acts.reserve(layers_.size() + 1);
    trace.acts.push_back(x);
    for (const auto& l : layers_) trace.acts.push_back(l->forward(trace.acts.back()));
    return trace.acts.back();
  }

  // Back-propagates dL/d(output). Parameter gradients of trainable layers are
  // accumulated into `grads` when it is non-null. Returns dL/d(input) when
  // need_dx, otherwise stops at the lowest layer that still needs work.
  Tensor<Scalar> backward(const Trace& trace, const Tensor<Scalar>& dy, Gradients<Scalar>* grads,
                          bool need_dx = true) const {
    std::size_t lowest = need_dx ? 0 : (grads ? first_trainable_ : layers_.size());
    Tensor<Scalar> cur = dy;
    for (std::size_t l = layers_.size(); l-- > lowest;) {
      std::vector<Matrix<Scalar>>* g = (grads && trainable(l)) ? &(*grads)[l] : nullptr;
      const bool below = need_dx || l > lowest;
      cur = layers_[l]->backward(trace.acts[l], trace.acts[l + 1], cur, g, below);
    }
    return need_dx ? cur : Tensor<Scalar>{};
  }

  Gradients<Scalar> zero_grads() const {
    Gradients<Scalar> g(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (!trainable(l)) continue;
      for (const auto& p : layers_[l]->params()) g[l].push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
    }
    return g;
  }

  // Parameters as (key, matrix) pairs with keys "<layer>.<kind>.<name>".
  std::vector<std::pair<std::string, Matrix<Scalar>*>> named_parameters() {
    std::vector<std::pair<std::string, Matrix<Scalar>*>> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto& layer = *layers_[l];
      for (std::size_t k = 0; k < layer.params().size(); ++k)
        out.emplace_back(std::to_string(l) + "." + layer.kind() + "." + layer.param_names()[k], &layer.params()[k]);
    }
    return out;
  }

  std::vector<std::pair<std::string, const Matrix<Scalar>*>> named_parameters() const {
    std::vector<std::pair<std::string, const Matrix<Scalar>*>> out;
    for (auto& [k, p] : const_cast<Network*>(this)->named_parameters()) out.emplace_back(k, p);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_)
      for (const auto& p : l->params()) n += static_cast<std::size_t>(p.size());
    return n;
  }

  // Checksum over parameters of layers [first, last).
  std::uint64_t checksum(std::size_t first = 0, std::size_t last = static_cast<std::size_t>(-1)) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    last = std::min(last, layers_.size());
    for (std::size_t l = first; l < last; ++l)
      for (const auto& p : layers_[l]->params()) h = fnv1a(p, h);
    return h;
  }

  template <typename Other>
  void copy_parameters_from(const Network<Other>& o) {
    for (std::size_t l = 0; l < layers_.size(); ++l)
      for (std::size_t k = 0; k < layers_[l]->params().size(); ++k)
        layers_[l]->params()[k] = o.layer(l).params()[k].template cast<Scalar>();
  }

 private:
  std::vector<LayerPtr<Scalar>> layers_;
  std::size_t first_trainable_ = 0;
};

// Adaptive-moment optimizer. State is per parameter of trainable layers.
template <typename Scalar>
class Adam {
 public:
  struct Options {
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  Adam(const Network<Scalar>& net, Options opt) : opt_(opt), m_(net.zero_grads()), v_(net.zero_grads()) {}
  explicit Adam(const Network<Scalar>& net) : Adam(net, Options{}) {}

  void step(Network<Scalar>& net, const Gradients<Scalar>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(opt_.beta1), b2 = static_cast<Scalar>(opt_.beta2);
    const auto step_size = static_cast<Scalar>(lr * std::sqrt(c2) / c1);
    const auto eps = static_cast<Scalar>(opt_.eps * std::sqrt(c2));
    for (std::size_t l = 0; l < grads.size(); ++l) {
      if (grads[l].empty() || !net.trainable(l)) continue;
      auto& params = net.layer(l).params();
      for (std::size_t k = 0; k < grads[l].size(); ++k) {
        auto m = m_[l][k].array();
        auto v = v_[l][k].array();
        const auto g = grads[l][k].array();
        m = b1 * m + (Scalar(1) - b1) * g;
        v = b2 * v + (Scalar(1) - b2) * g.square();
        params[k].array() -= step_size * m / (v.sqrt() + eps);
      }
    }
  }

  std::int64_t steps() const { return t_; }
  const Options& options() const { return opt_; }

  // Moment buffers exposed for checkpointing.
  Gradients<Scalar>& first_moment() { return m_; }
  Gradients<Scalar>& second_moment() { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  Options opt_{};
  Gradients<Scalar> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace dras::nn
