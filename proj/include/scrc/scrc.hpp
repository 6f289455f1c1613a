#pragma once

#include "scrc/binary_io.hpp"
#include "scrc/datastore.hpp"
#include "scrc/error.hpp"
#include "scrc/generate.hpp"
#include "scrc/geometry.hpp"
#include "scrc/gradcheck.hpp"
#include "scrc/metrics.hpp"
#include "scrc/model.hpp"
#include "scrc/nncore.hpp"
#include "scrc/pipeline.hpp"
#include "scrc/rng.hpp"
#include "scrc/synth.hpp"
#include "scrc/text.hpp"
#include "scrc/train.hpp"
