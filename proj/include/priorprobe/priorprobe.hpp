#pragma once

#include "priorprobe/core.hpp"
#include "priorprobe/stimulus_space.hpp"
#include "priorprobe/gatekeeper.hpp"
#include "priorprobe/participant.hpp"
#include "priorprobe/chain.hpp"
#include "priorprobe/recovery.hpp"
#include "priorprobe/oracle.hpp"
#include "priorprobe/eval.hpp"
#include "priorprobe/config.hpp"
#include "priorprobe/session.hpp"
#include "priorprobe/cohort.hpp"
#include "priorprobe/service.hpp"
