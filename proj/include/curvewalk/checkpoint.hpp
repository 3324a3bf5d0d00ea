#ifndef CURVEWALK_CHECKPOINT_HPP_
#define CURVEWALK_CHECKPOINT_HPP_

#include <map>
#include <string>

#include "curvewalk/mlp.hpp"
#include "curvewalk/tensor.hpp"

namespace curvewalk {

// Parameter checkpoint container, little-endian:
//   magic "CWT1", u32 tensor count, then per tensor:
//   u16 name length, name bytes, u8 rank, u32 per dim, f32 payload row-major.
void save_checkpoint(const std::string& path, const ParamStore& params);
std::map<std::string, Tensor> read_checkpoint(const std::string& path);
// Loads into an existing store; every stored name must match in shape and
// every parameter must be present.
void load_checkpoint(const std::string& path, ParamStore& params);

}  // namespace curvewalk

#endif  // CURVEWALK_CHECKPOINT_HPP_
