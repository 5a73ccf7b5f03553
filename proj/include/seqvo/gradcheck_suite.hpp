#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace seqvo::verify {

enum class Scope { kOps, kLosses, kEnd2End };

std::optional<Scope> parse_scope(const std::string& text);

struct CheckItem {
  std::string name;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  std::size_t coords = 0;

  bool passed() const { return max_rel_error < threshold; }
};

inline constexpr double kOpThreshold = 1e-3;
inline constexpr double kLossThreshold = 1e-3;
inline constexpr double kEnd2EndThreshold = 1e-2;

struct SuiteOptions {
  std::uint64_t seed = 1;
  // Adds an operator whose backward rule is deliberately wrong.
  bool inject_fault = false;
};

// Runs every registered gradient check of a scope at 64-bit precision.
std::vector<CheckItem> run_suite(Scope scope, const SuiteOptions& options = {});

}  // namespace seqvo::verify
