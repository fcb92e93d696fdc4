#pragma once

#include <ostream>

namespace vcnn {

/// Compact oracle suite behind `vcnn selftest`: operator identities, adjoint
/// checks, cross-variant agreement, a finite-difference probe and the
/// persistence round trips. Prints one line per check; returns 0 when all
/// pass.
int run_selftest(std::ostream& os);

}  // namespace vcnn
