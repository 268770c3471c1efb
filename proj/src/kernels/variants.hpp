#pragma once

#include "fedtt/kernels.hpp"

namespace fedtt::kernels::detail {

#if defined(FEDTT_HAVE_AVX2_TU)
extern const KernelTable kAvx2Table;
#endif
extern const KernelTable kScalarTable;

}  // namespace fedtt::kernels::detail
