#include "miv/sum.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace miv::detail {

bool use_parallel(std::size_t nchunks) {
#ifdef _OPENMP
    return nchunks > 1 && omp_get_max_threads() > 1 && !omp_in_parallel();
#else
    (void)nchunks;
    return false;
#endif
}

}  // namespace miv::detail
