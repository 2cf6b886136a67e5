// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header for the library (the command line lives in cli.hpp).
#pragma once

#include "explicit3d/config.hpp"
#include "explicit3d/decode.hpp"
#include "explicit3d/diffcore.hpp"
#include "explicit3d/errors.hpp"
#include "explicit3d/eval.hpp"
#include "explicit3d/geometry.hpp"
#include "explicit3d/graphnet.hpp"
#include "explicit3d/loss.hpp"
#include "explicit3d/model.hpp"
#include "explicit3d/pipeline.hpp"
#include "explicit3d/relatedness.hpp"
#include "explicit3d/synthscene.hpp"
#include "explicit3d/train.hpp"
