#pragma once

#include <sfde/errors.hpp>
#include <sfde/spectral_domain.hpp>
#include <sfde/rng.hpp>
#include <sfde/report.hpp>
#include <sfde/parallel.hpp>
#include <sfde/semigroup_kernel.hpp>
#include <sfde/stochastic_driver.hpp>
#include <sfde/delay_dynamics.hpp>
#include <sfde/fixedpoint_solvers.hpp>
#include <sfde/measure_lab.hpp>
#include <sfde/config.hpp>
#include <sfde/experiments.hpp>
