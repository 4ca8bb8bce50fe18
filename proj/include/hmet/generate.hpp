#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hmet/problem_io.hpp"

namespace hmet {

// Deterministic fixture families. Coefficients are Fourier band-limited
// (wavenumbers up to 3 per axis) so every fixture stays smooth on coarse
// grids and refines consistently.
//
//   r1_smooth          rank 1, smooth dense coefficient
//   antihermitian      smooth anti-Hermitian coefficient, identity metric
//                      already harmonic
//   unitary_twist      zero coefficient, unitary seam twist
//   jordan_twist       zero coefficient, single Jordan block seam twist
//   jordan_const       constant strictly triangular coefficient
//   triangular_smooth  smooth triangular coefficient with unipotent loop
//                      transport, spatially varying
//   diag_blocks        block diagonal smooth coefficient, two summands
//   scrambled_blocks   diag_blocks conjugated by a constant frame change
//   generic            smooth dense coefficient
//
// All families exist in dim 1; antihermitian, diag_blocks, scrambled_blocks
// and generic also in dim 2.
Problem generate_problem(const std::string& family, int dim, std::array<int, 2> sizes, int rank,
                         std::uint64_t seed);

const std::vector<std::string>& generator_families();

} // namespace hmet
