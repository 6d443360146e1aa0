#pragma once

#include "g2kit/correlator.hpp"
#include "g2kit/error.hpp"
#include "g2kit/estimator.hpp"
#include "g2kit/keyvalue.hpp"
#include "g2kit/lifetime.hpp"
#include "g2kit/parallel.hpp"
#include "g2kit/simulator.hpp"
#include "g2kit/timetag.hpp"
#include "g2kit/uncertainty.hpp"
