#pragma once

#include "config.hpp"
#include "csv.hpp"
#include "error.hpp"
#include "hilbert.hpp"
#include "log.hpp"
#include "metrics.hpp"
#include "models.hpp"
#include "ode.hpp"
#include "parallel.hpp"
#include "paths.hpp"
#include "pfode.hpp"
#include "rectify.hpp"
#include "rng.hpp"
#include "training.hpp"
