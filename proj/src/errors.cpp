#include "dmdfm/errors.hpp"

#include <atomic>
#include <iostream>

namespace dmdfm {

namespace {
void default_warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }
std::atomic<WarnHandler> g_warn{&default_warn};
}  // namespace

void set_warn_handler(WarnHandler handler) { g_warn.store(handler ? handler : &default_warn); }

WarnHandler warn_handler() { return g_warn.load(); }

void warn(const std::string& msg) { g_warn.load()(msg); }

}  // namespace dmdfm
