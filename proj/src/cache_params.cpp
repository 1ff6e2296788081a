#include "fuseconv/cache_params.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include "gemm_driver.hpp"

namespace fuseconv {

namespace {

constexpr double kL1PanelShare = 0.36;
constexpr double kL2BlockShare = 0.40;
constexpr double kL3BlockShare = 0.25;
constexpr std::size_t kNcWithoutL3 = 3072;
constexpr std::size_t kNcCap = 4096;

std::size_t round_down(double value, std::size_t multiple) {
    const auto v = static_cast<std::size_t>(value);
    return std::max(multiple, v / multiple * multiple);
}

/// Largest multiple of `multiple` such that `other` x result floats take
/// `share` of `bytes`.
std::size_t fit_extent(std::size_t bytes, double share, std::size_t other, std::size_t multiple) {
    return round_down(share * static_cast<double>(bytes) / static_cast<double>(other * sizeof(float)), multiple);
}

}  // namespace

GemmCacheParams reference_params(const CacheHierarchy& hw) {
    hw.validate();
    GemmCacheParams p;
    p.kc = fit_extent(hw.l1_bytes, kL1PanelShare, p.mr + p.nr, 8);
    p.mc = fit_extent(hw.l2_bytes, kL2BlockShare, p.kc, 2 * p.mr);
    p.nc = hw.l3_bytes == 0 ? kNcWithoutL3
                            : std::min(kNcCap, fit_extent(hw.l3_bytes, kL3BlockShare, p.kc, 2 * p.nr));
    return p;
}

CacheSelection select_cache_params(std::size_t m, std::size_t n, std::size_t k, const CacheHierarchy& hw,
                                   const ParamTable* overrides) {
    if (overrides)
        if (auto hit = overrides->lookup(m, n, k)) return *hit;

    const GemmCacheParams ref = reference_params(hw);
    CacheSelection sel;
    sel.params = ref;
    GemmCacheParams& p = sel.params;
    p.kc = std::min(ref.kc, std::max<std::size_t>(k, 1));
    const std::size_t m_up = detail::round_up(std::max<std::size_t>(m, 1), p.mr);

    if (m <= kB2A1MaxM && n >= kB2A1Aspect * m) {
        sel.variant = LoopVariant::B2A1;
        p.mc = std::min(m_up, ref.mc);
        p.nc = fit_extent(hw.l2_bytes, kL2BlockShare, p.kc, 2 * p.nr);
    } else {
        sel.variant = LoopVariant::A2B1;
        p.mc = std::min(m_up, fit_extent(hw.l2_bytes, kL2BlockShare, p.kc, 2 * p.mr));
        p.nc = ref.nc;
    }
    return sel;
}

void ParamTable::set(std::size_t m, std::size_t n, std::size_t k, const CacheSelection& sel) {
    entries_[{m, n, k}] = sel;
}

std::optional<CacheSelection> ParamTable::lookup(std::size_t m, std::size_t n, std::size_t k) const {
    auto it = entries_.find({m, n, k});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

std::string ParamTable::serialize() const {
    std::ostringstream os;
    os << "# m n k mc nc kc mr nr variant\n";
    for (const auto& [key, sel] : entries_) {
        const auto& [m, n, k] = key;
        const auto& p = sel.params;
        os << m << ' ' << n << ' ' << k << ' ' << p.mc << ' ' << p.nc << ' ' << p.kc << ' ' << p.mr << ' ' << p.nr
           << ' ' << to_string(sel.variant) << '\n';
    }
    return os.str();
}

ParamTable ParamTable::parse(const std::string& text) {
    ParamTable table;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream fields(line);
        std::vector<std::string> tok;
        for (std::string t; fields >> t;) tok.push_back(t);
        if (tok.empty()) continue;
        if (tok.size() != 9) throw ParseError(lineno, "expected 9 fields (m n k mc nc kc mr nr variant)");
        std::size_t v[8];
        for (int i = 0; i < 8; ++i) {
            try {
                if (tok[i].find_first_not_of("0123456789") != std::string::npos)
                    throw std::invalid_argument(tok[i]);
                std::size_t used = 0;
                v[i] = static_cast<std::size_t>(std::stoull(tok[i], &used));
                if (used != tok[i].size()) throw std::invalid_argument(tok[i]);
            } catch (const std::exception&) {
                throw ParseError(lineno, "field '" + tok[i] + "' is not a non-negative integer");
            }
        }
        CacheSelection sel;
        sel.params = {v[3], v[4], v[5], v[6], v[7]};
        try {
            sel.variant = parse_variant(tok[8]);
        } catch (const ConfigError& e) {
            throw ParseError(lineno, e.what());
        }
        table.set(v[0], v[1], v[2], sel);
    }
    return table;
}

ParamTable ParamTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open parameter table '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void ParamTable::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write parameter table '" + path + "'");
    out << serialize();
}

CandidateResult measure_gemm(std::size_t m, std::size_t n, std::size_t k, const CacheSelection& sel,
                             const CacheHierarchy& hw, const AutotuneOptions& opt) {
    CandidateResult r;
    r.selection = sel;
    try {
        validate_params(sel.params, sel.variant, m, n, k, hw);
    } catch (const ConfigError& e) {
        r.error = e.what();
        return r;
    }
    r.valid = true;

    std::vector<float> a(m * k), b(k * n), c(m * n);
    fill_uniform(a, opt.seed, -1.0f, 1.0f);
    fill_uniform(b, opt.seed + 1, -1.0f, 1.0f);
    const ConstMatrixView av = ConstMatrixView::row_major(a, m, k);
    const ConstMatrixView bv = ConstMatrixView::col_major(b, k, n);
    const MutMatrixView cv = MutMatrixView::col_major(c, m, n);

    GemmOptions go;
    go.params = sel.params;
    go.variant = sel.variant;
    go.threads = opt.threads;
    go.isa = opt.isa;
    go.accumulate = false;
    go.hw = &hw;

    for (int i = 0; i < opt.warmup; ++i) gemm(av, bv, cv, go);
    const double flops = 2.0 * static_cast<double>(m) * static_cast<double>(n) * static_cast<double>(k);
    for (int i = 0; i < std::max(opt.reps, 1); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        gemm(av, bv, cv, go);
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.samples.push_back(flops / std::max(s, 1e-9) * 1e-9);
    }
    std::vector<double> sorted = r.samples;
    std::sort(sorted.begin(), sorted.end());
    r.median_gflops = sorted[sorted.size() / 2];
    return r;
}

AutotuneResult autotune(std::size_t m, std::size_t n, std::size_t k, const CacheHierarchy& hw,
                        std::span<const CacheSelection> grid, const AutotuneOptions& opt) {
    if (grid.empty()) throw ConfigError("autotune needs at least one candidate");
    AutotuneResult out;
    bool found = false;
    for (const CacheSelection& sel : grid) {
        out.candidates.push_back(measure_gemm(m, n, k, sel, hw, opt));
        const CandidateResult& r = out.candidates.back();
        if (r.valid && (!found || r.median_gflops > out.gflops)) {
            out.best = r.selection;
            out.gflops = r.median_gflops;
            found = true;
        }
    }
    if (!found) throw ConfigError("no autotune candidate fits the cache hierarchy");
    return out;
}

std::vector<CacheSelection> default_candidate_grid(std::size_t m, std::size_t n, std::size_t k,
                                                   const CacheHierarchy& hw) {
    std::vector<CacheSelection> grid;
    auto add = [&](const CacheSelection& s) {
        if (std::find(grid.begin(), grid.end(), s) == grid.end()) grid.push_back(s);
    };
    add(select_cache_params(m, n, k, hw));
    add({reference_params(hw), LoopVariant::A2B1});

    const GemmCacheParams ref = reference_params(hw);
    const std::size_t m_up = detail::round_up(std::max<std::size_t>(m, 1), ref.mr);
    for (std::size_t kc : {ref.kc / 2, ref.kc, ref.kc * 3 / 2}) {
        kc = std::min(std::max<std::size_t>(kc / 8 * 8, 8), std::max<std::size_t>(k, 1));
        for (double share : {0.25, 0.40, 0.60}) {
            CacheSelection a2b1;
            a2b1.params = ref;
            a2b1.params.kc = kc;
            a2b1.params.mc = std::min(m_up, fit_extent(hw.l2_bytes, share, kc, 2 * ref.mr));
            add(a2b1);

            CacheSelection b2a1;
            b2a1.variant = LoopVariant::B2A1;
            b2a1.params = ref;
            b2a1.params.kc = kc;
            b2a1.params.mc = std::min(m_up, ref.mc);
            b2a1.params.nc = fit_extent(hw.l2_bytes, share, kc, 2 * ref.nr);
            add(b2a1);
        }
    }
    return grid;
}

}  // namespace fuseconv
