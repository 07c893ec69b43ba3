#include "hfn/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <mutex>

#include "hfn/errors.hpp"
#include "hfn/log.hpp"

namespace hfn::kernels {

namespace detail {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

}  // namespace detail

const char* isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "?";
}

namespace {

bool isa_available(Isa isa) {
    switch (isa) {
        case Isa::scalar: return true;
        case Isa::avx2: return detail::avx2_table() != nullptr && detail::cpu_has_avx2();
        case Isa::neon: return detail::neon_table() != nullptr;
    }
    return false;
}

Isa detect() {
    if (const char* env = std::getenv("HFN_SIMD"); env && std::strcmp(env, "auto") != 0) {
        Isa wanted = Isa::scalar;
        bool known = true;
        if (std::strcmp(env, "scalar") == 0) wanted = Isa::scalar;
        else if (std::strcmp(env, "avx2") == 0) wanted = Isa::avx2;
        else if (std::strcmp(env, "neon") == 0) wanted = Isa::neon;
        else known = false;
        if (known && isa_available(wanted)) return wanted;
        log::warn(std::string("HFN_SIMD=") + env + " not usable here, falling back to auto");
    }
    if (isa_available(Isa::avx2)) return Isa::avx2;
    if (isa_available(Isa::neon)) return Isa::neon;
    return Isa::scalar;
}

std::atomic<int>& active_slot() {
    static std::atomic<int> slot{static_cast<int>(detect())};
    return slot;
}

}  // namespace

Isa active_isa() { return static_cast<Isa>(active_slot().load(std::memory_order_relaxed)); }

void force_isa(Isa isa) {
    if (!isa_available(isa)) {
        throw ContractError(std::string("kernels: ISA unavailable: ") + isa_name(isa));
    }
    active_slot().store(static_cast<int>(isa), std::memory_order_relaxed);
}

void reset_isa() { active_slot().store(static_cast<int>(detect()), std::memory_order_relaxed); }

std::vector<Isa> available_isas() {
    std::vector<Isa> out{Isa::scalar};
    if (isa_available(Isa::avx2)) out.push_back(Isa::avx2);
    if (isa_available(Isa::neon)) out.push_back(Isa::neon);
    return out;
}

const KernelTable& table_for(Isa isa) {
    switch (isa) {
        case Isa::scalar: return detail::scalar_table();
        case Isa::avx2:
            if (const KernelTable* t = detail::avx2_table(); t && detail::cpu_has_avx2()) return *t;
            break;
        case Isa::neon:
            if (const KernelTable* t = detail::neon_table()) return *t;
            break;
    }
    throw ContractError(std::string("kernels: ISA unavailable: ") + isa_name(isa));
}

const KernelTable& active_table() { return table_for(active_isa()); }

}  // namespace hfn::kernels
