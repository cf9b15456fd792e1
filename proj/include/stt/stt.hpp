// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#pragma once

#include "stt/attention.hpp"
#include "stt/autodiff.hpp"
#include "stt/checkpoint.hpp"
#include "stt/config.hpp"
#include "stt/conv.hpp"
#include "stt/data.hpp"
#include "stt/experiment.hpp"
#include "stt/grad_check.hpp"
#include "stt/kron.hpp"
#include "stt/nn.hpp"
#include "stt/perturb.hpp"
#include "stt/tensor.hpp"
#include "stt/verify.hpp"
