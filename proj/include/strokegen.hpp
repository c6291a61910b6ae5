#pragma once

#include "strokegen/checkpoint.hpp"
#include "strokegen/config.hpp"
#include "strokegen/diffusion/model.hpp"
#include "strokegen/errors.hpp"
#include "strokegen/layout.hpp"
#include "strokegen/metrics.hpp"
#include "strokegen/pipeline.hpp"
#include "strokegen/raster.hpp"
#include "strokegen/sample.hpp"
#include "strokegen/stroke.hpp"
#include "strokegen/style_encoder.hpp"
#include "strokegen/style_training.hpp"
#include "strokegen/synthetic.hpp"
#include "strokegen/text_layout.hpp"
