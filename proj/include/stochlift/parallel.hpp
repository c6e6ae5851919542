#pragma once

namespace stochlift {

/// Thread count for the OpenMP kernels. Values <= 0 restore the runtime
/// default. Results of every kernel are independent of this setting.
void set_num_threads(int threads);
int num_threads();

}  // namespace stochlift
