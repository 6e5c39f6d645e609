#pragma once

#include <cstddef>
#include <string>

#include "mtbd/model.hpp"
#include "mtbd/seqmut.hpp"

namespace mtbd::fixtures {

// Eight-bin affinity type space. Values are the published bin medians; the
// cutoffs are evenly spaced (width 0.6) and chosen to separate those medians,
// since the underlying affinity sample is not distributed.
TypeSpace paper_type_space();

// Baseline type-change rates (printed values divided by 1000), diagonal
// renormalized to the exact negative row sum.
SquareMatrix paper_gamma_star();

// Same matrix exactly as printed (row sums off by rounding).
SquareMatrix paper_gamma_star_printed();

// Type index of the naive (affinity 0) sequence in paper_type_space().
std::size_t naive_state();

// Ground truths for the simulation studies.
Params no_misspecification_truth();   // NM, AL, ISP
Params carrying_capacity_truth();     // CC, CC-soft, CC+SLM
inline constexpr int kCarryingCapacity = 1000;
inline constexpr double kSimulationTime = 15.0;
inline constexpr std::size_t kTreesPerSet = 58;
inline constexpr std::size_t kTreeSets = 5;

// Small synthetic stand-ins for the published sequence-level models, built
// from a fixed seed. data/context_synthetic_v1.csv, data/naive_synthetic_v1.txt
// and data/affinity_synthetic_v1.csv hold the same tables.
inline constexpr std::size_t kSyntheticCodons = 219;  // 657 nt
std::string synthetic_naive_sequence();
// 3-mer model: 1 per target, transitions x2, RC/GY hotspot centres x10.
ContextModel synthetic_context_model();
AffinityModel synthetic_affinity_model();

// File version tag written into the shipped JSON fixtures.
inline constexpr const char* kFixtureVersion = "mtbd.fixture/1";

}  // namespace mtbd::fixtures
