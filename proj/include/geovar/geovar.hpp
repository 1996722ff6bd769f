#pragma once

#include "core.hpp"
#include "models.hpp"
#include "jacobi.hpp"
#include "variation.hpp"
#include "variation_scans.hpp"
#include "comparison.hpp"
#include "oscillatory.hpp"
#include "lattice.hpp"
#include "stable_sum.hpp"
#include "experiments.hpp"
