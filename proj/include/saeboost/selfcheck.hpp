#pragma once

// Built-in numerical and format self-checks run by `repro paper-pattern`.

#include <cstdint>
#include <string>

#include "saeboost/sae.hpp"

namespace saeboost {

struct CheckOutcome {
  bool passed = false;
  std::size_t instances = 0;
  std::size_t comparisons = 0;
  double worst_abs = 0.0;
  double worst_rel = 0.0;
  std::string detail;
};

/// A random 64-bit SAE with d <= 8, F <= 16 and its batch (B <= 4) and
/// target. Instances are redrawn until every gate decision is at least
/// `margin` away from flipping, so finite differences stay on one support.
struct TinyInstance {
  SaeParams64 sae;
  Matrix64 x;
  Matrix64 target;
  double l1 = 0.0;
};

TinyInstance random_tiny_instance(std::uint64_t seed, double margin);

/// Analytic gradients against central differences of the loss, step `eps`.
/// A partial passes when |a - n| <= max(abs_tol, rel_tol * max(|a|, |n|)).
CheckOutcome check_gradients(std::size_t instances, std::uint64_t seed, double eps = 1e-3,
                             double rel_tol = 1e-4, double abs_tol = 1e-6);

/// Random SAE of any role and activation, for format tests.
SaeParams random_params(std::uint64_t seed);

/// Save/load of random shards and checkpoints through files in `scratch_dir`,
/// compared bitwise.
CheckOutcome check_round_trips(std::size_t instances, std::uint64_t seed, const std::string& scratch_dir);

}  // namespace saeboost
