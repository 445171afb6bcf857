#include "xgml/parallel.hpp"

#include <cstdlib>
#include <string>

namespace xgml {

unsigned effective_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("XGML_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (...) {
      // fall through to hardware default
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

}  // namespace xgml
