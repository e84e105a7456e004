#pragma once

#include "cg/aci.hpp"
#include "cg/env.hpp"
#include "cg/features.hpp"
#include "cg/surrogate.hpp"
#include "cg/mpc.hpp"
#include "cg/harness.hpp"
#include "cg/io.hpp"
