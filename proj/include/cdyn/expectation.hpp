#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "cdyn/model.hpp"
#include "cdyn/rng.hpp"
#include "cdyn/types.hpp"

namespace cdyn {

struct ExpectationStrategy {
  enum class Mode { Exact, MonteCarlo };
  Mode mode = Mode::Exact;
  std::int64_t mc_samples = 0;
  std::uint64_t mc_seed = 0;
  std::int64_t exact_budget = std::int64_t(1) << 24;

  static ExpectationStrategy exact(std::int64_t budget = std::int64_t(1) << 24) {
    ExpectationStrategy s;
    s.mode = Mode::Exact;
    s.exact_budget = budget;
    return s;
  }
  static ExpectationStrategy monte_carlo(std::int64_t samples, std::uint64_t seed) {
    ExpectationStrategy s;
    s.mode = Mode::MonteCarlo;
    s.mc_samples = samples;
    s.mc_seed = seed;
    return s;
  }
  // Same strategy with a substream seed; exact mode is unaffected.
  ExpectationStrategy substream(std::uint64_t tag) const;
};

// Compensated (Neumaier) accumulation so MC reductions are bit-stable
// under the fixed lane partition regardless of worker count.
struct KahanScalar {
  double sum = 0.0, comp = 0.0;
  void add(double x) {
    double t = sum + x;
    comp += (std::abs(sum) >= std::abs(x)) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + comp; }
};

struct KahanMatrix {
  Matrix sum, comp;
  explicit KahanMatrix(int rows = 0, int cols = 0)
      : sum(Matrix::Zero(rows, cols)), comp(Matrix::Zero(rows, cols)) {}
  void add(const Matrix& x);
  Matrix value() const { return sum + comp; }
};

// Sign-cube sampling/enumeration. `dims` lists the cube dimensions; the
// callback receives one +-1 matrix per cube (dims[k] x n columns) for each
// chunk. Enumeration visits all prod(2^dims) points; MC draws `n` points
// across a fixed number of lanes so results do not depend on threading.
using SignChunkFn = std::function<void(std::span<const Matrix>, std::int64_t chunk_offset)>;
void enumerate_sign_cubes(std::span<const int> dims, std::int64_t budget, const SignChunkFn& visit);
void mc_sign_cubes(std::span<const int> dims, std::int64_t n, std::uint64_t seed,
                   const SignChunkFn& visit);
std::int64_t sign_cube_total(std::span<const int> dims);

namespace detail {

inline constexpr int kMcLanes = 64;
inline constexpr std::int64_t kChunkCols = 4096;

// Lane-partitioned sign sampling, generic over the matrix scalar. The bit
// stream per lane is fixed (one 64-bit word per started 64 bits per cube),
// so every instantiation sees the same signs.
template <typename MatrixT>
void mc_sign_cubes_t(std::span<const int> dims, std::int64_t n, std::uint64_t seed,
                     const std::function<void(std::span<const MatrixT>, std::int64_t)>& visit) {
  if (n <= 0) throw std::invalid_argument("mc_sign_cubes: sample count must be positive");
  using Scalar = typename MatrixT::Scalar;
  std::vector<std::mt19937_64> lane_rng;
  std::vector<std::int64_t> lane_end(kMcLanes);
  std::int64_t cum = 0;
  for (int lane = 0; lane < kMcLanes; ++lane) {
    lane_rng.push_back(make_rng(seed, static_cast<std::uint64_t>(lane)));
    cum += n / kMcLanes + (lane < n % kMcLanes ? 1 : 0);
    lane_end[lane] = cum;
  }
  std::vector<MatrixT> cubes(dims.size());
  int lane = 0;
  for (std::int64_t base = 0; base < n; base += kChunkCols) {
    const std::int64_t chunk = std::min(kChunkCols, n - base);
    for (std::size_t c = 0; c < dims.size(); ++c) cubes[c].resize(dims[c], chunk);
    for (std::int64_t col = 0; col < chunk; ++col) {
      while (base + col >= lane_end[lane]) ++lane;
      std::mt19937_64& rng = lane_rng[lane];
      for (std::size_t c = 0; c < dims.size(); ++c) {
        std::uint64_t word = 0;
        for (int bit = 0; bit < dims[c]; ++bit) {
          if (bit % 64 == 0) word = rng();
          cubes[c](bit, col) = (word & 1u) ? Scalar(1) : Scalar(-1);
          word >>= 1;
        }
      }
    }
    visit(cubes, base);
  }
}

}  // namespace detail

// Per-chunk population quantities for a batch of positive samples.
// Latent columns hold values (+-1/sqrt(d)). The inner expectations over
// negatives are exact: the exponent is linear in the independent sign
// coordinates, so the partition function and first moments factor into
// products of cosh and tanh (the closed forms of the dynamics lemmas).
struct ScoreBatch {
  // inputs
  Matrix U_A, U_B;       // d x n stacked latents [z; xi_A], [z; xi_B]
  // pair quantities
  Vector p;              // f_A+ . f_B+
  // negative-side machinery
  Matrix CB, H;          // d x n: coefficient vectors for B- and A-negatives
  Matrix TB, TA;         // tanh of the scaled coefficient args
  Vector logZB, logZA;   // log inner partition functions
  Vector S_A, S_B;       // softmax scores per sample
  Vector w0;             // 2 - S_A - S_B
  Vector gB, gA;         // negative-term weights S * Z * exp(-tau^2 p)
  Vector ipB, ipA;       // inner moments of <f_A+, f_B-> and <f_A-, f_B+>

  int n() const { return static_cast<int>(p.size()); }
};

// Evaluate the ScoreBatch for given positive latents.
ScoreBatch score_batch(const KState& ks, double tau_sq, double K, Matrix U_A, Matrix U_B);

// Drive chunks of positive samples (z+, xi_A+, xi_B+) through `visit`
// according to the strategy. `visit` sees the ScoreBatch of each chunk;
// accumulate chunk totals with Kahan adds and divide by the returned
// total count.
std::int64_t for_each_positive_chunk(const KState& ks, double tau_sq, double K,
                                     const ExpectationStrategy& strategy,
                                     const std::function<void(const ScoreBatch&)>& visit);

// S_A(x_A+, x_B+) (or S_B for side B): softmax score of one positive pair,
// inner expectation over the opposite-side negative. Exact mode uses the
// factorized exhaustive sum; MC mode a seeded average over drawn negatives.
double softmax_score(const KState& ks, double tau_sq, double K, const Vector& z_plus,
                     const Vector& xi_A_plus, const Vector& xi_B_plus, Side side,
                     const ExpectationStrategy& strategy);

// L = -E log S_A - E log S_B, outer expectation over the positives.
double contrastive_loss(const KState& ks, double tau_sq, double K,
                        const ExpectationStrategy& strategy);

// L-hat = -E <f_A+, f_B+>, via the strategy.
double non_contrastive_loss(const KState& ks, const ExpectationStrategy& strategy);

// Same quantity by the closed form -<K_A, K_B> / (N_A N_B d).
double non_contrastive_loss_closed_form(const KState& ks);

}  // namespace cdyn
