#pragma once

#include "ltrc/distributions.hpp"
#include "ltrc/estimator.hpp"
#include "ltrc/inference.hpp"
#include "ltrc/io.hpp"
#include "ltrc/likelihood.hpp"
#include "ltrc/model.hpp"
#include "ltrc/parallel.hpp"
#include "ltrc/random.hpp"
#include "ltrc/simulation.hpp"
#include "ltrc/spline_basis.hpp"
