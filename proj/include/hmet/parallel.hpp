#pragma once

namespace hmet {

// Worker count for pointwise loops, from the HMET_THREADS environment
// variable (default 1). Reductions always run on a single thread with a
// fixed association order, so results do not depend on this setting.
int num_threads();

} // namespace hmet
