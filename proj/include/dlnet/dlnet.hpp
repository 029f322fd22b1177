#pragma once

#include "dlnet/adam.hpp"
#include "dlnet/bytes.hpp"
#include "dlnet/checkpoint.hpp"
#include "dlnet/compression.hpp"
#include "dlnet/config.hpp"
#include "dlnet/data.hpp"
#include "dlnet/distillation.hpp"
#include "dlnet/emit.hpp"
#include "dlnet/error.hpp"
#include "dlnet/layers.hpp"
#include "dlnet/ledger.hpp"
#include "dlnet/models.hpp"
#include "dlnet/parallel.hpp"
#include "dlnet/pipeline.hpp"
#include "dlnet/quantization.hpp"
#include "dlnet/record.hpp"
#include "dlnet/rng.hpp"
#include "dlnet/selection.hpp"
#include "dlnet/tape.hpp"
#include "dlnet/tensor.hpp"
