#pragma once

namespace flashcast {

const char* version() noexcept;

}  // namespace flashcast
