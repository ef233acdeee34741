#pragma once

// Umbrella header: the whole library.

#include "bayes_dp.hpp"
#include "errors.hpp"
#include "harness.hpp"
#include "model.hpp"
#include "multiuser.hpp"
#include "rational.hpp"
#include "regret.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "strategies.hpp"
