// Bias-corrected Adam. Moments live in the same precision as the parameters
// and are keyed by parameter name so they can be checkpointed alongside.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sarc/encoder.hpp"
#include "sarc/tensor.hpp"

namespace sarc {

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  std::unordered_map<std::string, std::vector<T>> m, v;

  // One update over every named parameter. A parameter without accumulated
  // gradient contributes zeros, which leaves it unchanged while its moments
  // are still zero.
  void step(NamedTensors<T>& params, double lr) {
    ++step_count;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (auto& [name, tensor] : params) {
      long n = tensor.numel();
      auto& mv = m[name];
      auto& vv = v[name];
      if (mv.empty()) {
        mv.assign(n, T(0));
        vv.assign(n, T(0));
      } else if (static_cast<long>(mv.size()) != n) {
        throw std::invalid_argument("adam: moment size " + std::to_string(mv.size()) + " does not match \"" +
                                    name + "\" with " + std::to_string(n) + " values");
      }
      const auto& grad = tensor.data()->grad;
      T* p = tensor.values().data();
      for (long i = 0; i < n; ++i) {
        T g = i < static_cast<long>(grad.size()) ? grad[i] : T(0);
        mv[i] = T(beta1) * mv[i] + T(1.0 - beta1) * g;
        vv[i] = T(beta2) * vv[i] + T(1.0 - beta2) * g * g;
        double mhat = mv[i] / bc1;
        double vhat = vv[i] / bc2;
        p[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }
};

}  // namespace sarc
