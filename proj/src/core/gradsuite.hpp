#pragma once

#include "gradcheck.hpp"

namespace nforge {

// Finite-difference check over every differentiable op family: conv3d at
// dilations 1/2/4, stride-2 downsample, nearest upsample, fully connected,
// batchnorm, roi_align, and the three loss heads.
std::vector<GradCheckReport> gradient_suite(uint64_t seed = 0);

// One fixed-width row per report, plus a PASS/FAIL trailer.
std::string format_gradient_table(const std::vector<GradCheckReport>& reports);

}  // namespace nforge
