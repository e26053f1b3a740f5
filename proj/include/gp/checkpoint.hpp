#ifndef GP_CHECKPOINT_HPP_
#define GP_CHECKPOINT_HPP_

#include <string>
#include <utility>
#include <vector>

#include "gp/tensor.hpp"

namespace gp {

// Flat binary file of 64-bit floats (<prefix>.bin) with a JSON sidecar
// (<prefix>.json) listing tensor names, shapes, and element offsets.
void save_checkpoint(const std::string& prefix,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& prefix);

}  // namespace gp

#endif  // GP_CHECKPOINT_HPP_
