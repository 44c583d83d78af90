#pragma once

namespace diveup::cli {

// Oracle-equivalence and gradient suites; prints one line per suite and
// returns 0 only if every suite passes.
int run_selftest();

}  // namespace diveup::cli
