// Fast invariant suite behind `rnng selfcheck`: batched==unbatched losses,
// a finite-difference gradient spot check, beam-vs-enumeration on a toy
// grammar, and checkpoint integrity.

#pragma once

#include <string>
#include <vector>

#include "rnng/tensor.hpp"

namespace rnng {

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelfcheckOptions {
  Dtype dt = Dtype::F64;
  uint64_t seed = 7;
  // Optional checkpoint (+ vocab files) to validate for integrity.
  std::string checkpoint;
  std::string vocab_words;
  std::string vocab_nts;
  std::string merges;
};

std::vector<CheckOutcome> run_selfcheck(const SelfcheckOptions& opt);

}  // namespace rnng
