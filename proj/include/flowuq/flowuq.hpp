#pragma once

#include "flowuq/armington.hpp"
#include "flowuq/attenuation.hpp"
#include "flowuq/core.hpp"
#include "flowuq/diagnostics.hpp"
#include "flowuq/eb.hpp"
#include "flowuq/error.hpp"
#include "flowuq/fixed_effects.hpp"
#include "flowuq/gravity.hpp"
#include "flowuq/intervals.hpp"
#include "flowuq/parallel.hpp"
#include "flowuq/rng.hpp"
#include "flowuq/robust.hpp"
#include "flowuq/synthetic.hpp"
#include "flowuq/uq.hpp"
