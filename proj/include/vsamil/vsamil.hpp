#pragma once

// Umbrella header.

#include "vsamil/classifier.hpp"
#include "vsamil/codebook.hpp"
#include "vsamil/data.hpp"
#include "vsamil/diffnum.hpp"
#include "vsamil/encoder.hpp"
#include "vsamil/error.hpp"
#include "vsamil/eval.hpp"
#include "vsamil/hlb.hpp"
#include "vsamil/json_io.hpp"
#include "vsamil/pipeline.hpp"
#include "vsamil/tune.hpp"
