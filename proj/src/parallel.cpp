#include "hmet/parallel.hpp"

#include <cstdlib>
#include <string>

namespace hmet {

int num_threads() {
    static int cached = [] {
        const char* s = std::getenv("HMET_THREADS");
        if (!s) return 1;
        try {
            const int v = std::stoi(s);
            return v > 0 ? v : 1;
        } catch (...) {
            return 1;
        }
    }();
    return cached;
}

} // namespace hmet
