#pragma once

// Umbrella header: graph scattering embeddings, a strongly convex classifier
// on top of them, and certified removal of nodes, features and whole graphs
// from the trained model.

#include "gstun/classifier.hpp"
#include "gstun/dataset_io.hpp"
#include "gstun/errors.hpp"
#include "gstun/experiment.hpp"
#include "gstun/flops.hpp"
#include "gstun/graph.hpp"
#include "gstun/rng.hpp"
#include "gstun/scattering.hpp"
#include "gstun/unlearn.hpp"
#include "gstun/wavelets.hpp"
