#pragma once

#include "mcfa/cascade.hpp"
#include "mcfa/checkpoint.hpp"
#include "mcfa/data.hpp"
#include "mcfa/dynamic_weighting.hpp"
#include "mcfa/losses.hpp"
#include "mcfa/model.hpp"
#include "mcfa/synth.hpp"
#include "mcfa/tensor.hpp"
#include "mcfa/trainer.hpp"
