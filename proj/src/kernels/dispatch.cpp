#include <algorithm>

#include "fuseconv/error.hpp"
#include "fuseconv/kernels.hpp"
#include "tables.hpp"

namespace fuseconv::simd {

const KernelTable* find_kernels(Isa isa) {
    switch (isa) {
    case Isa::Scalar:
        return &scalar_kernels();
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::Sse:
        return &sse_kernels();
    case Isa::Avx2:
        return __builtin_cpu_supports("avx2") ? &avx2_kernels() : nullptr;
#endif
#if defined(__aarch64__)
    case Isa::Neon:
        return &neon_kernels();
#endif
    default:
        return nullptr;
    }
}

const KernelTable& kernels(Isa isa) {
    if (const KernelTable* t = find_kernels(isa)) return *t;
    throw ConfigError("kernel ISA '" + to_string(isa) + "' is not available on this machine");
}

std::vector<Isa> available_isas() {
    std::vector<Isa> out;
    for (Isa isa : {Isa::Scalar, Isa::Sse, Isa::Avx2, Isa::Neon})
        if (find_kernels(isa)) out.push_back(isa);
    return out;
}

Isa best_isa() {
    static const Isa best = available_isas().back();
    return best;
}

std::string to_string(Isa isa) {
    switch (isa) {
    case Isa::Scalar:
        return "scalar";
    case Isa::Sse:
        return "sse";
    case Isa::Avx2:
        return "avx2";
    case Isa::Neon:
        return "neon";
    }
    return "unknown";
}

Isa parse_isa(const std::string& name) {
    if (name == "auto") return best_isa();
    for (Isa isa : {Isa::Scalar, Isa::Sse, Isa::Avx2, Isa::Neon})
        if (to_string(isa) == name) return isa;
    throw ConfigError("unknown kernel ISA '" + name + "' (expected auto, scalar, sse, avx2 or neon)");
}

}  // namespace fuseconv::simd
