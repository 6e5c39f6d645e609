#include "mtbd/fixtures.hpp"

#include <cmath>
#include <numbers>

#include "mtbd/random.hpp"

namespace mtbd::fixtures {

TypeSpace paper_type_space() {
  return TypeSpace({-2.43, -1.44, -0.66, -0.13, 0.08, 0.8, 1.35, 2.18},
                   {-1.82, -1.22, -0.62, -0.02, 0.58, 1.18, 1.78});
}

SquareMatrix paper_gamma_star_printed() {
  const SquareMatrix per_mille = SquareMatrix::from_rows({
      {-4.62, 3.35, 0.45, 0.27, 0.36, 0.09, 0.09, 0.0},
      {202.08, -220.91, 13.88, 3.17, 0.99, 0.2, 0.59, 0.0},
      {110.3, 150.73, -288.49, 22.63, 4.61, 0.22, 0.0, 0.0},
      {92.16, 51.13, 98.46, -285.71, 36.19, 7.77, 0.0, 0.0},
      {86.54, 24.62, 65.35, 132.85, -332.07, 18.27, 4.44, 0.0},
      {72.06, 21.89, 15.3, 48.68, 100.97, -283.56, 24.66, 0.0},
      {58.28, 20.7, 7.92, 13.29, 48.06, 99.69, -253.06, 5.11},
      {64.6, 29.82, 9.94, 9.94, 9.94, 14.91, 168.96, -308.11},
  });
  return per_mille.scaled(1.0 / 1000.0);
}

SquareMatrix paper_gamma_star() { return normalize_generator(paper_gamma_star_printed()); }

std::size_t naive_state() { return bin_index(paper_type_space(), 0.0); }

Params no_misspecification_truth() {
  Params p;
  p.phi = {1.3, 1.0, -1.1, 0.5};
  p.mu = 0.5;
  p.delta = 20.0;
  p.gamma_star = paper_gamma_star();
  p.rho = {0.1};
  return p;
}

Params carrying_capacity_truth() {
  Params p;
  p.phi = {2.5, 1.5, -0.1, 0.6};
  p.mu = 1.0;
  p.delta = 1.0;
  p.gamma_star = paper_gamma_star();
  p.rho = {0.1};
  return p;
}

namespace {

// Portable draws straight from the engine bits so the tables do not depend on
// the standard library's distribution implementations.
double unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double gaussian(Rng& rng) {
  const double u1 = 1.0 - unit(rng);
  const double u2 = unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

bool is_transition(char a, char b) {
  auto purine = [](char c) { return c == 'A' || c == 'G'; };
  return purine(a) == purine(b);
}

// 3-mer reduction of the WRC/GYW motifs: RC (C after a purine) and GY (G
// before a pyrimidine).
bool is_hotspot(const std::string& ctx) {
  const bool rc = ctx[1] == 'C' && (ctx[0] == 'A' || ctx[0] == 'G');
  const bool gy = ctx[1] == 'G' && (ctx[2] == 'C' || ctx[2] == 'T');
  return rc || gy;
}

}  // namespace

std::string synthetic_naive_sequence() {
  Rng rng(20260101);
  std::string seq;
  while (seq.size() < 3 * kSyntheticCodons) {
    std::string codon(3, 'A');
    for (auto& c : codon) c = base_char(static_cast<int>(rng() >> 62));
    if (translate_codon(codon.data()) != '*') seq += codon;
  }
  return seq;
}

ContextModel synthetic_context_model() {
  ContextModel m(3);
  const std::string alphabet = "ACGTN";
  for (char l : alphabet)
    for (char c : std::string("ACGT"))
      for (char r : alphabet) {
        const std::string ctx{l, c, r};
        for (char to : std::string("ACGT")) {
          if (to == c) continue;
          double rate = is_transition(c, to) ? 2.0 : 1.0;
          if (is_hotspot(ctx)) rate *= 10.0;
          m.set_rate(ctx, to, rate);
        }
      }
  return m;
}

AffinityModel synthetic_affinity_model() {
  AffinityModel m(synthetic_naive_sequence());
  Rng rng(20260202);
  const std::string amino = "ACDEFGHIKLMNPQRSTVWY";
  for (std::size_t site = 0; site < m.codons(); ++site)
    for (char aa : amino) {
      const double e = -0.05 + 0.35 * gaussian(rng);
      if (aa != m.naive_protein()[site]) m.set_effect(site, aa, std::round(e * 1e4) / 1e4);
    }
  return m;
}

}  // namespace mtbd::fixtures
