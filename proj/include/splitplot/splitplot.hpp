#ifndef SPLITPLOT_SPLITPLOT_HPP
#define SPLITPLOT_SPLITPLOT_HPP

#include "errors.hpp"
#include "hypothesis.hpp"
#include "io.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "oracle.hpp"
#include "rng.hpp"
#include "simulation.hpp"
#include "test_engine.hpp"
#include "trace_estimators.hpp"

#endif
