#pragma once

#include "telkit/common.hpp"
#include "telkit/datamodel.hpp"
#include "telkit/diagnosis.hpp"
#include "telkit/gradcheck.hpp"
#include "telkit/layers.hpp"
#include "telkit/losses.hpp"
#include "telkit/metrics.hpp"
#include "telkit/model.hpp"
#include "telkit/pipeline.hpp"
#include "telkit/proposals.hpp"
#include "telkit/statistics.hpp"
#include "telkit/synthetic.hpp"
#include "telkit/tensor.hpp"
