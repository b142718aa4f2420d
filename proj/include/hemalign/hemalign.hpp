// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//

#ifndef HEMALIGN_HEMALIGN_HPP
#define HEMALIGN_HEMALIGN_HPP

#include "hemalign/autodiff.hpp"
#include "hemalign/codebook.hpp"
#include "hemalign/config.hpp"
#include "hemalign/container.hpp"
#include "hemalign/encoders.hpp"
#include "hemalign/error.hpp"
#include "hemalign/eval.hpp"
#include "hemalign/gradcheck.hpp"
#include "hemalign/hrf.hpp"
#include "hemalign/matching.hpp"
#include "hemalign/ntcl.hpp"
#include "hemalign/rng.hpp"
#include "hemalign/synthdata.hpp"
#include "hemalign/tensor.hpp"
#include "hemalign/trainer.hpp"

#endif // HEMALIGN_HEMALIGN_HPP
