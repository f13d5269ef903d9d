#pragma once

#include "dnnc/calibration.hpp"
#include "dnnc/cli.hpp"
#include "dnnc/copula.hpp"
#include "dnnc/error.hpp"
#include "dnnc/io.hpp"
#include "dnnc/lfi.hpp"
#include "dnnc/margin.hpp"
#include "dnnc/nnet.hpp"
#include "dnnc/pipeline.hpp"
#include "dnnc/predict.hpp"
#include "dnnc/random.hpp"
#include "dnnc/stats.hpp"
