#pragma once

#include "analysis.hpp"
#include "distill_sim.hpp"
#include "errors.hpp"
#include "grad_reg.hpp"
#include "io.hpp"
#include "linear_codec.hpp"
#include "pixel_field.hpp"
#include "rng.hpp"
#include "texture_field.hpp"
#include "version.hpp"
