// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#pragma once

#include "rnnmod/composer.hpp"
#include "rnnmod/decomposer.hpp"
#include "rnnmod/edges.hpp"
#include "rnnmod/error.hpp"
#include "rnnmod/export.hpp"
#include "rnnmod/format.hpp"
#include "rnnmod/metrics.hpp"
#include "rnnmod/model.hpp"
#include "rnnmod/runtime.hpp"
#include "rnnmod/tensor.hpp"
#include "rnnmod/trainer.hpp"
