#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seunet/gradcheck.hpp"

namespace seunet {

enum class CheckCategory { kSmooth, kPiecewise, kEndToEnd };

/// Default tolerances: 1e-6 smooth, 1e-4 conv/pool/batch-norm paths and composite
/// blocks, 1e-3 for the whole thin model.
double default_tolerance(CheckCategory category);

struct SuiteOptions {
  int seeds = 20;
  std::uint64_t base_seed = 0;
  /// Replaces the operator-level tolerances when set; the end-to-end check keeps its own.
  std::optional<double> operator_tolerance;
  double end_to_end_tolerance = 1e-3;
  Index max_coordinates = 64;
  bool include_end_to_end = true;
};

struct SuiteResult {
  std::string name;
  CheckCategory category = CheckCategory::kSmooth;
  double tolerance = 0.0;
  int seeds = 0;
  double max_rel_error = 0.0;
  std::string worst;  // seed and coordinate of the largest error
  bool passed = false;
};

std::vector<std::string> gradcheck_suite_names();

/// Runs every registered check over `seeds` seeds at 64-bit precision.
std::vector<SuiteResult> run_gradcheck_suite(const SuiteOptions& options);

std::string format_suite_result(const SuiteResult& r);

}  // namespace seunet
