#pragma once

#include "bfl/commands.hpp"
#include "bfl/config.hpp"
#include "bfl/error.hpp"
#include "bfl/io.hpp"
#include "bfl/metrics.hpp"
#include "bfl/net.hpp"
#include "bfl/parallel.hpp"
#include "bfl/scene.hpp"
#include "bfl/solvers.hpp"
#include "bfl/spectra.hpp"
#include "bfl/steering.hpp"
#include "bfl/train.hpp"
