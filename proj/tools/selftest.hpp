#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace naref::selftest {

struct Check {
  std::string name;
  /// Wall-clock budget in seconds; exceeding it fails the check.
  double budget = 0.0;
  /// Returns pass/fail and fills `detail` with the measured values.
  std::function<bool(std::string& detail)> run;
};

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

/// Loss, gradient, flow/TROI, distortion, filter, correlation and heatmap suites.
std::vector<Check> oracle_checks();

/// Toy training gate and snapshot replay. Artifacts go under `scratch`.
std::vector<Check> pipeline_checks(const std::filesystem::path& scratch, unsigned replay_jobs = 3);

/// Simulated raters against the study service.
std::vector<Check> study_checks(const std::filesystem::path& scratch);

/// Runs one check, converting exceptions into failures.
CheckResult run_check(const Check& check);

/// "PASS name (1.2s): detail"
std::string format_result(const CheckResult& r);

}  // namespace naref::selftest
