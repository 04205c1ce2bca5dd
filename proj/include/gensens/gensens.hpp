#pragma once

#define GENSENS_VERSION "1.0.0"

#include <gensens/bootstrap.hpp>
#include <gensens/contour.hpp>
#include <gensens/core_data.hpp>
#include <gensens/csv_io.hpp>
#include <gensens/entropy_balancing.hpp>
#include <gensens/error.hpp>
#include <gensens/estimators.hpp>
#include <gensens/logistic.hpp>
#include <gensens/oracle.hpp>
#include <gensens/sensitivity.hpp>
#include <gensens/simulation.hpp>
#include <gensens/wald.hpp>
#include <gensens/weights.hpp>
