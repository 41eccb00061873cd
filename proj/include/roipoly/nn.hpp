#pragma once

// Parameter registration and forward helpers for the small building blocks
// shared by the pyramid and the decoder, plus the Adam optimizer.

#include <cmath>
#include <random>
#include <string>

#include "roipoly/autodiff.hpp"
#include "roipoly/tensor.hpp"

namespace roipoly::nn {

enum class Init { xavier, zero };

/// Registers `<name>.w` (out x in) and `<name>.b` (1 x out).
inline void add_linear(ParamStore& ps, std::mt19937_64& rng, const std::string& name, int in, int out,
                       Init init = Init::xavier) {
  ps.add(name + ".w", init == Init::zero ? Tensor({out, in}) : init::xavier(rng, out, in));
  ps.add(name + ".b", Tensor({1, out}));
}

/// Two-layer perceptron `<name>.fc1` (in -> hidden), `<name>.fc2` (hidden -> out).
inline void add_mlp(ParamStore& ps, std::mt19937_64& rng, const std::string& name, int in, int hidden,
                    int out, Init last = Init::xavier) {
  add_linear(ps, rng, name + ".fc1", in, hidden);
  add_linear(ps, rng, name + ".fc2", hidden, out, last);
}

inline void add_layer_norm(ParamStore& ps, const std::string& name, int width) {
  ps.add(name + ".g", Tensor({1, width}, 1.0));
  ps.add(name + ".b", Tensor({1, width}));
}

inline ad::Var linear(ad::Tape& t, const ParamStore& ps, const std::string& name, ad::Var x) {
  return ad::linear(x, t.parameter(ps, name + ".w"), t.parameter(ps, name + ".b"));
}

inline ad::Var mlp(ad::Tape& t, const ParamStore& ps, const std::string& name, ad::Var x) {
  return linear(t, ps, name + ".fc2", ad::silu(linear(t, ps, name + ".fc1", x)));
}

inline ad::Var layer_norm(ad::Tape& t, const ParamStore& ps, const std::string& name, ad::Var x) {
  return ad::layer_norm(x, t.parameter(ps, name + ".g"), t.parameter(ps, name + ".b"));
}

/// Adam with bias correction.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(const ParamStore& params, Options opt) : opt_(opt), m_(params.zeros_like()), v_(params.zeros_like()) {}

  /// params -= lr * m_hat / (sqrt(v_hat) + eps). A zero learning rate leaves
  /// params bit-identical.
  void step(ParamStore& params, const ParamStore& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, t_);
    const double c2 = 1.0 - std::pow(opt_.beta2, t_);
    for (auto& [name, p] : params) {
      const Tensor& g = grads.at(name);
      Tensor& m = m_.at(name);
      Tensor& v = v_.at(name);
      for (std::size_t i = 0; i < p.data.size(); ++i) {
        const double gi = g.data[i];
        m.data[i] = opt_.beta1 * m.data[i] + (1.0 - opt_.beta1) * gi;
        v.data[i] = opt_.beta2 * v.data[i] + (1.0 - opt_.beta2) * gi * gi;
        if (opt_.lr != 0.0) {
          p.data[i] -= opt_.lr * (m.data[i] / c1) / (std::sqrt(v.data[i] / c2) + opt_.eps);
        }
      }
    }
  }

  long steps() const { return t_; }

 private:
  Options opt_;
  ParamStore m_;
  ParamStore v_;
  long t_ = 0;
};

}  // namespace roipoly::nn
