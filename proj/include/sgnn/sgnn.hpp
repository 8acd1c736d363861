#ifndef SGNN_SGNN_HPP
#define SGNN_SGNN_HPP

// Umbrella header for the whole library.

#include "sgnn/autograd_train.hpp"
#include "sgnn/checks.hpp"
#include "sgnn/errors.hpp"
#include "sgnn/experiments.hpp"
#include "sgnn/graph_core.hpp"
#include "sgnn/rng.hpp"
#include "sgnn/sgnn_model.hpp"
#include "sgnn/spectral.hpp"
#include "sgnn/stochastic_filter.hpp"
#include "sgnn/types.hpp"
#include "sgnn/variance_analysis.hpp"
#include "sgnn/verification.hpp"

#endif  // SGNN_SGNN_HPP
