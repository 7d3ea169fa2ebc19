#pragma once

#include "safe_ctrl/domain.hpp"
#include "safe_ctrl/features.hpp"
#include "safe_ctrl/barrier.hpp"
#include "safe_ctrl/envs.hpp"
#include "safe_ctrl/cbf.hpp"
#include "safe_ctrl/filter.hpp"
#include "safe_ctrl/model.hpp"
#include "safe_ctrl/planner.hpp"
#include "safe_ctrl/learner.hpp"
#include "safe_ctrl/verify.hpp"
#include "safe_ctrl/config.hpp"
#include "safe_ctrl/trace_io.hpp"
#include "safe_ctrl/runner.hpp"
