#pragma once

// Acceptance criteria as one-line verdicts. Criteria 1-7 read a completed
// experiment grid; 8-14 are self-contained property checks.

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace spectral::checks {

struct Verdict {
  int id = 0;
  std::string name;
  bool pass = false;
  bool missing_data = false;  // failed because grid results were absent
  std::string detail;
};

std::vector<Verdict> grid_criteria(const std::filesystem::path& grid_dir);
std::vector<Verdict> property_criteria(const std::vector<int>& ids = {8, 9, 10, 11, 12, 13, 14});

/// "PASS  [ 8] name: detail" per verdict.
void print(std::ostream& out, const std::vector<Verdict>& verdicts);

}  // namespace spectral::checks
