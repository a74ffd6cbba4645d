#pragma once

#include "slowregion/bbox.hpp"
#include "slowregion/cli.hpp"
#include "slowregion/config.hpp"
#include "slowregion/error.hpp"
#include "slowregion/evaluator.hpp"
#include "slowregion/gradcheck.hpp"
#include "slowregion/image.hpp"
#include "slowregion/image_io.hpp"
#include "slowregion/ingest.hpp"
#include "slowregion/layers.hpp"
#include "slowregion/log.hpp"
#include "slowregion/loss.hpp"
#include "slowregion/mining.hpp"
#include "slowregion/network.hpp"
#include "slowregion/proposals.hpp"
#include "slowregion/rng.hpp"
#include "slowregion/segmentation.hpp"
#include "slowregion/synthgen.hpp"
#include "slowregion/tensor.hpp"
#include "slowregion/trainer.hpp"
