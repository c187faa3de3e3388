#pragma once

// Umbrella header for the core library. The harness (JSON configs, presets)
// lives under qdiff/harness/ and needs nlohmann/json on the include path.

#include "qdiff/bounds.hpp"
#include "qdiff/errors.hpp"
#include "qdiff/evaluate.hpp"
#include "qdiff/finite_mdp.hpp"
#include "qdiff/io.hpp"
#include "qdiff/parallel.hpp"
#include "qdiff/policy.hpp"
#include "qdiff/qlearn.hpp"
#include "qdiff/quantize.hpp"
#include "qdiff/rng.hpp"
#include "qdiff/sde.hpp"
