#pragma once

#include "cvtmle/types.hpp"
#include "cvtmle/rng.hpp"
#include "cvtmle/data.hpp"
#include "cvtmle/learners.hpp"
#include "cvtmle/crossfit.hpp"
#include "cvtmle/parameters.hpp"
#include "cvtmle/targeting.hpp"
#include "cvtmle/inference.hpp"
#include "cvtmle/estimator.hpp"
#include "cvtmle/simulator.hpp"
