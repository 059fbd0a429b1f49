#pragma once

#include "tblab/analytic.hpp"
#include "tblab/buffer.hpp"
#include "tblab/compare.hpp"
#include "tblab/error.hpp"
#include "tblab/estimators.hpp"
#include "tblab/scheduler.hpp"
#include "tblab/swarm.hpp"
#include "tblab/trace.hpp"
