#pragma once

#include "dimlight/model/network.h"

namespace dimlight::model {

/// Mirror padding (edge pixel not repeated) at the bottom and right so both
/// extents become multiples of `multiple`.
Tensor<float> pad_reflect(const Tensor<float>& x, std::size_t multiple);

/// Top-left h x w window.
Tensor<float> crop(const Tensor<float>& x, std::size_t h, std::size_t w);

/// Full-image inference for any extents: pad, forward without recording,
/// crop back.
Tensor<float> enhance(const Network<float>& net, const Tensor<float>& low);

}  // namespace dimlight::model
