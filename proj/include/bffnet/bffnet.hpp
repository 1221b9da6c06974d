#pragma once

#include "bffnet/bfem.hpp"
#include "bffnet/checkpoint.hpp"
#include "bffnet/config.hpp"
#include "bffnet/data.hpp"
#include "bffnet/encoder.hpp"
#include "bffnet/errors.hpp"
#include "bffnet/fcfm.hpp"
#include "bffnet/global_aggregator.hpp"
#include "bffnet/losses.hpp"
#include "bffnet/metrics.hpp"
#include "bffnet/model.hpp"
#include "bffnet/train.hpp"
