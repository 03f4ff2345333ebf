#pragma once

#include "ppmd/baseline.hpp"
#include "ppmd/config.hpp"
#include "ppmd/error.hpp"
#include "ppmd/io.hpp"
#include "ppmd/kernel_regression.hpp"
#include "ppmd/lifting.hpp"
#include "ppmd/linear_reduction.hpp"
#include "ppmd/manifold.hpp"
#include "ppmd/pipeline.hpp"
#include "ppmd/snapshot.hpp"
#include "ppmd/spline.hpp"
#include "ppmd/temporal_pmd.hpp"
