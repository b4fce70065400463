#pragma once

#include "psgd/checkpoint.hpp"
#include "psgd/config.hpp"
#include "psgd/data.hpp"
#include "psgd/error.hpp"
#include "psgd/experiment.hpp"
#include "psgd/linalg.hpp"
#include "psgd/metrics.hpp"
#include "psgd/models.hpp"
#include "psgd/optimizer.hpp"
#include "psgd/oracles.hpp"
#include "psgd/precond.hpp"
#include "psgd/random.hpp"
