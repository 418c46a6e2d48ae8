#pragma once

#include "irlin/bench.hpp"
#include "irlin/datagen.hpp"
#include "irlin/em.hpp"
#include "irlin/forward.hpp"
#include "irlin/io.hpp"
#include "irlin/likelihood.hpp"
#include "irlin/mdp.hpp"
#include "irlin/missing.hpp"
#include "irlin/optimize.hpp"
#include "irlin/trainer.hpp"
#include "irlin/trajectory.hpp"
#include "irlin/types.hpp"
