#pragma once

#include "eegatt/adam.hpp"
#include "eegatt/allocator.hpp"
#include "eegatt/attention.hpp"
#include "eegatt/binary_io.hpp"
#include "eegatt/checkpoint.hpp"
#include "eegatt/data.hpp"
#include "eegatt/explain.hpp"
#include "eegatt/gradcheck.hpp"
#include "eegatt/gradcheck_suite.hpp"
#include "eegatt/losses.hpp"
#include "eegatt/model.hpp"
#include "eegatt/ops.hpp"
#include "eegatt/random.hpp"
#include "eegatt/tensor.hpp"
#include "eegatt/topomap.hpp"
#include "eegatt/training.hpp"
