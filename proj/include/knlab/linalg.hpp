#pragma once

#include "knlab/array.hpp"

namespace knlab {

// Largest singular value of a dense matrix, by power iteration on the
// smaller Gram matrix. Initial vector is all-ones (normalized); iteration
// stops when successive estimates differ by < 1e-12 or after 10000 rounds.
// If the start vector is (numerically) orthogonal to the top subspace the
// estimate stalls at ~0 and a fixed-seed random restart is used.
double top_singular_value(const Array& m);

}  // namespace knlab
