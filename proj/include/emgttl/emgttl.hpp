#pragma once

#include "emgttl/common.hpp"
#include "emgttl/dataset.hpp"
#include "emgttl/dsp.hpp"
#include "emgttl/model.hpp"
#include "emgttl/tensor.hpp"
#include "emgttl/trainer.hpp"
#include "emgttl/verify.hpp"
