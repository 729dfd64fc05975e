#pragma once

#include <string>
#include <vector>

#include "fsta/tensor.hpp"

namespace fsta {

// A named model weight. Optimizers replace `value` with a fresh leaf tensor on
// every update; frozen parameters (trainable == false) never require grads.
struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(v.detach(train)), trainable(train) {}
};

using ParameterList = std::vector<Parameter*>;

}  // namespace fsta
