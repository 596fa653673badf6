#include "flashcast/version.hpp"

namespace flashcast {

const char* version() noexcept { return "0.1.0"; }

}  // namespace flashcast
