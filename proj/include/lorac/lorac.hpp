#pragma once

#include "extnat.hpp"
#include "rng.hpp"
#include "parallel.hpp"
#include "environment.hpp"
#include "bandscheme.hpp"
#include "dynamics.hpp"
#include "boxes.hpp"
#include "harness.hpp"
