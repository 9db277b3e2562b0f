#pragma once

#include "mmot/analytic.hpp"
#include "mmot/cost.hpp"
#include "mmot/error.hpp"
#include "mmot/expression.hpp"
#include "mmot/extract.hpp"
#include "mmot/io.hpp"
#include "mmot/log_math.hpp"
#include "mmot/marginals.hpp"
#include "mmot/matrix.hpp"
#include "mmot/oracle.hpp"
#include "mmot/problem.hpp"
#include "mmot/problem_spec.hpp"
#include "mmot/simplex.hpp"
#include "mmot/solver.hpp"
#include "mmot/state_space.hpp"
