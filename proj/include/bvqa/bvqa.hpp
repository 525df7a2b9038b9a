// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The bvqa Authors

#pragma once

#include "bvqa/backbone.hpp"
#include "bvqa/commands.hpp"
#include "bvqa/error.hpp"
#include "bvqa/gradcheck.hpp"
#include "bvqa/image.hpp"
#include "bvqa/ingest.hpp"
#include "bvqa/metrics.hpp"
#include "bvqa/nncore.hpp"
#include "bvqa/patcher.hpp"
#include "bvqa/pooling.hpp"
#include "bvqa/trainer.hpp"
#include "bvqa/util.hpp"
