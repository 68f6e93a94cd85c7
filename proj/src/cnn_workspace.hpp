#pragma once

#include <vector>

#include "poisonlab/classifier.hpp"

namespace poisonlab {

struct CnnWorkspace {
  struct BlockBuffers {
    AlignedFloats input;  // B*H*W*Cin
    AlignedFloats cols;   // B*OH*OW x 9*Cin
    AlignedFloats act;    // B*OH*OW x Cout (post-activation)
    std::vector<int> argmax;  // per pooled element, index into act
    AlignedFloats d_act;
    AlignedFloats d_cols;
    AlignedFloats d_input;
  };
  std::vector<BlockBuffers> blocks;
  AlignedFloats pooled_last;  // B*PH*PW x C
  AlignedFloats features;     // B x C
  AlignedFloats logits;       // B x 2
  AlignedFloats d_logits;
  AlignedFloats d_features;
  AlignedFloats d_pooled;
};

}  // namespace poisonlab
