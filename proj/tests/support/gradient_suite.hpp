#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace oracle {

struct TensorGradCheck {
  std::string name;  // "<case>/<tensor>"
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t size = 0;  // tensor element count; smaller tensors are checked in full
};

/// Central-difference checks of every layer's backward pass and of a composed
/// desk-scale network, `coords` random coordinates per tensor.
std::vector<TensorGradCheck> run_gradient_suite(std::uint64_t seed, std::size_t coords);

}  // namespace oracle
