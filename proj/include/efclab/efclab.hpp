#pragma once

// Umbrella header for the EFC workbench.

#include "efclab/common.hpp"
#include "efclab/core.hpp"
#include "efclab/efc.hpp"
#include "efclab/estimator.hpp"
#include "efclab/freeze.hpp"
#include "efclab/gates.hpp"
#include "efclab/harness.hpp"
#include "efclab/pipeline.hpp"
#include "efclab/report.hpp"
#include "efclab/scaling.hpp"
#include "efclab/statusgen.hpp"
#include "efclab/suite.hpp"
#include "efclab/tasks.hpp"
#include "efclab/trace_io.hpp"
