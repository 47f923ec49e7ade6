// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "growlearn/checkpoint.hpp"
#include "growlearn/config.hpp"
#include "growlearn/data.hpp"
#include "growlearn/error.hpp"
#include "growlearn/layers.hpp"
#include "growlearn/metrics.hpp"
#include "growlearn/network.hpp"
#include "growlearn/ops.hpp"
#include "growlearn/rng.hpp"
#include "growlearn/runner.hpp"
#include "growlearn/sparse.hpp"
#include "growlearn/tape.hpp"
#include "growlearn/tensor.hpp"
#include "growlearn/trainer.hpp"
