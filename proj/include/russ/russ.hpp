#pragma once

#include "russ/errors.hpp"
#include "russ/geometry.hpp"
#include "russ/rng.hpp"
#include "russ/tool_registry.hpp"
#include "russ/guideline.hpp"
#include "russ/retrieval.hpp"
#include "russ/sim_world.hpp"
#include "russ/trace.hpp"
#include "russ/agent.hpp"
#include "russ/policy.hpp"
#include "russ/reward.hpp"
#include "russ/remote.hpp"
