// Umbrella header.
#pragma once

#include "pam/environments.hpp"
#include "pam/feynman_kac.hpp"
#include "pam/lattice.hpp"
#include "pam/lyapunov.hpp"
#include "pam/parallel.hpp"
#include "pam/rng.hpp"
#include "pam/stats.hpp"
#include "pam/text.hpp"
#include "pam/variational.hpp"
#include "pam/walker.hpp"
