#pragma once

#include "radarfuse/channel_calib.hpp"
#include "radarfuse/core.hpp"
#include "radarfuse/dataset_io.hpp"
#include "radarfuse/depth.hpp"
#include "radarfuse/dsp.hpp"
#include "radarfuse/errors.hpp"
#include "radarfuse/fft.hpp"
#include "radarfuse/geometry.hpp"
#include "radarfuse/sim.hpp"
