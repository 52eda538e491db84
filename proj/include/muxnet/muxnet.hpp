// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "muxnet/artifact.hpp"
#include "muxnet/bits.hpp"
#include "muxnet/compiler.hpp"
#include "muxnet/costmodel.hpp"
#include "muxnet/error.hpp"
#include "muxnet/frontend_loop.hpp"
#include "muxnet/inference.hpp"
#include "muxnet/mpu_core.hpp"
#include "muxnet/pipeline.hpp"
#include "muxnet/quantizer.hpp"
#include "muxnet/static_table.hpp"
#include "muxnet/verify.hpp"
