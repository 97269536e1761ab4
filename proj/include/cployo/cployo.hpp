#pragma once

// Umbrella header.

#include "cployo/attention.hpp"
#include "cployo/autodiff.hpp"
#include "cployo/backbone.hpp"
#include "cployo/boxes.hpp"
#include "cployo/checkpoint.hpp"
#include "cployo/common.hpp"
#include "cployo/dataset.hpp"
#include "cployo/gradcheck.hpp"
#include "cployo/head.hpp"
#include "cployo/image_io.hpp"
#include "cployo/imaging.hpp"
#include "cployo/kan.hpp"
#include "cployo/loss.hpp"
#include "cployo/metrics.hpp"
#include "cployo/model.hpp"
#include "cployo/neck.hpp"
#include "cployo/nn.hpp"
#include "cployo/synthetic.hpp"
#include "cployo/tensor.hpp"
#include "cployo/train.hpp"
