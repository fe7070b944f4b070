#pragma once

#include "gasket_ids/errors.hpp"
#include "gasket_ids/rational.hpp"
#include "gasket_ids/geometry.hpp"
#include "gasket_ids/bernstein.hpp"
#include "gasket_ids/linalg.hpp"
#include "gasket_ids/operators.hpp"
#include "gasket_ids/random.hpp"
#include "gasket_ids/potentials.hpp"
#include "gasket_ids/spectra.hpp"
#include "gasket_ids/parallel.hpp"
#include "gasket_ids/montecarlo.hpp"
#include "gasket_ids/lab.hpp"
