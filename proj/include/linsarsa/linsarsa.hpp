#pragma once

#include "linsarsa/common.hpp"
#include "linsarsa/rng.hpp"
#include "linsarsa/mdp.hpp"
#include "linsarsa/policy.hpp"
#include "linsarsa/sarsa.hpp"
#include "linsarsa/oracle.hpp"
#include "linsarsa/io.hpp"
#include "linsarsa/analysis.hpp"
#include "linsarsa/experiment.hpp"
