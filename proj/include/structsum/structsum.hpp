#pragma once

#include "structsum/ablation.hpp"
#include "structsum/cli.hpp"
#include "structsum/config.hpp"
#include "structsum/decoder.hpp"
#include "structsum/encoder.hpp"
#include "structsum/error.hpp"
#include "structsum/gradcheck.hpp"
#include "structsum/gradcheck_suite.hpp"
#include "structsum/graphs.hpp"
#include "structsum/layers.hpp"
#include "structsum/log.hpp"
#include "structsum/micro.hpp"
#include "structsum/model.hpp"
#include "structsum/optim.hpp"
#include "structsum/params.hpp"
#include "structsum/pov.hpp"
#include "structsum/relations.hpp"
#include "structsum/rng.hpp"
#include "structsum/rouge.hpp"
#include "structsum/svo.hpp"
#include "structsum/tensor.hpp"
#include "structsum/text.hpp"
#include "structsum/training.hpp"
