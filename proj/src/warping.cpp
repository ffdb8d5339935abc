#include "hstr/warping.hpp"

namespace hstr {

Frame backwarp(const Frame& source, const FlowField& flow) {
  if (flow.height != source.height || flow.width != source.width)
    throw ShapeError("backwarp: flow " + std::to_string(flow.width) + "x" + std::to_string(flow.height) +
                     " does not fit frame " + std::to_string(source.width) + "x" + std::to_string(source.height));
  NoGradGuard guard;
  return array_to_frame(backwarp(frame_to_array(source), flow_to_array(flow)), 0, false);
}

}  // namespace hstr
