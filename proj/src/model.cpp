#include "fuseconv/model.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <unordered_map>

namespace fuseconv {

namespace {

using Keys = std::map<std::string, std::string>;

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return s;
}

bool valid_id(const std::string& id) {
    return !id.empty() && std::all_of(id.begin(), id.end(), [](unsigned char ch) {
        return std::isalnum(ch) || ch == '_' || ch == '-' || ch == '.';
    });
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, sep);) out.push_back(item);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

std::size_t parse_size(const std::string& text, const std::string& what, std::size_t line) {
    if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos)
        throw ParseError(line, what + " must be a non-negative integer, got '" + text + "'");
    try {
        return static_cast<std::size_t>(std::stoull(text));
    } catch (const std::exception&) {
        throw ParseError(line, what + " is out of range: '" + text + "'");
    }
}

float parse_float(const std::string& text, const std::string& what, std::size_t line) {
    try {
        std::size_t used = 0;
        const float v = std::stof(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw ParseError(line, what + " must be a number, got '" + text + "'");
}

/// Pops a key, returning nullopt when absent.
std::optional<std::string> take(Keys& keys, const std::string& name) {
    auto it = keys.find(name);
    if (it == keys.end()) return std::nullopt;
    std::string v = it->second;
    keys.erase(it);
    return v;
}

std::string require(Keys& keys, const std::string& name, const LayerSpec& l) {
    auto v = take(keys, name);
    if (!v) throw ParseError(l.line, to_string(l.kind) + " layer '" + l.id + "' needs " + name + "=");
    return *v;
}

/// Reads k/kh/kw style pairs: `both` sets both axes, `a`/`b` one each.
std::pair<std::size_t, std::size_t> take_pair(Keys& keys, const std::string& both, const std::string& a,
                                              const std::string& b, std::size_t fallback, std::size_t line) {
    std::size_t x = fallback, y = fallback;
    if (auto v = take(keys, both)) x = y = parse_size(*v, both, line);
    if (auto v = take(keys, a)) x = parse_size(*v, a, line);
    if (auto v = take(keys, b)) y = parse_size(*v, b, line);
    return {x, y};
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Stable per-layer seed: independent of layer order and of std::hash.
std::uint64_t layer_seed(std::uint64_t seed, const std::string& id) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char ch : id) h = (h ^ ch) * 0x100000001B3ull;
    return splitmix64(seed ^ splitmix64(h));
}

void annotate_shape(ModelSpec& m, LayerSpec& l) {
    auto in_shape = [&](std::size_t i) { return m.layers[m.find(l.inputs[i])].shape; };
    try {
        switch (l.kind) {
        case LayerKind::Input:
            l.shape.count();
            break;
        case LayerKind::Conv: {
            const Shape in = in_shape(0);
            l.conv.cin = in.c;
            const ConvGeometry g = conv_output_geometry(l.conv, in);
            l.shape = {1, g.ho, g.wo, l.conv.cout};
            break;
        }
        case LayerKind::BatchNorm:
        case LayerKind::Relu:
            l.shape = in_shape(0);
            break;
        case LayerKind::Pool:
            l.shape = pool_output_shape(in_shape(0), l.pool);
            break;
        case LayerKind::Add: {
            const Shape a = in_shape(0), b = in_shape(1);
            if (a != b)
                throw ParseError(l.line, "shape mismatch in add '" + l.id + "': '" + l.inputs[0] + "' is " +
                                             to_string(a) + " but '" + l.inputs[1] + "' is " + to_string(b));
            l.shape = a;
            break;
        }
        case LayerKind::Dense:
            l.shape = {1, 1, 1, l.units};
            break;
        }
    } catch (const GeometryError& e) {
        throw ParseError(l.line, "layer '" + l.id + "': " + e.what());
    }
}

}  // namespace

std::string to_string(LayerKind k) {
    switch (k) {
    case LayerKind::Input: return "input";
    case LayerKind::Conv: return "conv";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Relu: return "relu";
    case LayerKind::Pool: return "pool";
    case LayerKind::Add: return "add";
    case LayerKind::Dense: return "dense";
    }
    return "?";
}

std::optional<LayerKind> parse_layer_kind(const std::string& text) {
    const std::string s = lower(text);
    for (LayerKind k : {LayerKind::Input, LayerKind::Conv, LayerKind::BatchNorm, LayerKind::Relu, LayerKind::Pool,
                        LayerKind::Add, LayerKind::Dense})
        if (s == to_string(k)) return k;
    return std::nullopt;
}

std::size_t ModelSpec::find(const std::string& id) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].id == id) return i;
    return std::string::npos;
}

const LayerSpec& ModelSpec::at(const std::string& id) const {
    const std::size_t i = find(id);
    if (i == std::string::npos) throw ConfigError("model has no layer '" + id + "'");
    return layers[i];
}

std::vector<std::size_t> ModelSpec::consumer_counts() const {
    std::vector<std::size_t> counts(layers.size(), 0);
    for (const auto& l : layers)
        for (const auto& in : l.inputs) ++counts[find(in)];
    return counts;
}

ModelSpec parse_model(const std::string& text) {
    ModelSpec m;
    std::istringstream stream(text);
    std::vector<std::pair<std::size_t, std::vector<std::string>>> records;
    std::unordered_map<std::string, std::size_t> defined_at;

    std::string raw;
    for (std::size_t lineno = 1; std::getline(stream, raw); ++lineno) {
        if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        std::istringstream fields(raw);
        std::vector<std::string> tok;
        for (std::string t; fields >> t;) tok.push_back(t);
        if (tok.empty()) continue;

        if (tok[0][0] == '@') {
            if (tok.size() != 2) throw ParseError(lineno, "directive " + tok[0] + " takes exactly one value");
            if (tok[0] == "@batch") {
                m.batch = parse_size(tok[1], "@batch", lineno);
                if (m.batch == 0) throw ParseError(lineno, "@batch must be positive");
            } else if (tok[0] == "@seed") {
                m.seed = parse_size(tok[1], "@seed", lineno);
            } else if (tok[0] == "@weights") {
                m.weights_path = tok[1];
            } else {
                throw ParseError(lineno, "unknown directive " + tok[0]);
            }
            continue;
        }
        if (tok.size() < 2) throw ParseError(lineno, "expected 'id kind key=value...'");
        if (!valid_id(tok[0])) throw ParseError(lineno, "invalid layer id '" + tok[0] + "'");
        if (auto [it, fresh] = defined_at.emplace(tok[0], lineno); !fresh)
            throw ParseError(lineno, "duplicate layer id '" + tok[0] + "' (first defined on line " +
                                         std::to_string(it->second) + ")");
        records.emplace_back(lineno, std::move(tok));
    }
    if (records.empty()) throw ParseError(0, "model defines no layers");

    for (auto& [lineno, tok] : records) {
        LayerSpec l;
        l.id = tok[0];
        l.line = lineno;
        const auto kind = parse_layer_kind(tok[1]);
        if (!kind) throw ParseError(lineno, "unknown layer kind '" + tok[1] + "'");
        l.kind = *kind;

        Keys keys;
        for (std::size_t i = 2; i < tok.size(); ++i) {
            const auto eq = tok[i].find('=');
            if (eq == std::string::npos || eq == 0) throw ParseError(lineno, "expected key=value, got '" + tok[i] + "'");
            if (!keys.emplace(tok[i].substr(0, eq), tok[i].substr(eq + 1)).second)
                throw ParseError(lineno, "key '" + tok[i].substr(0, eq) + "' given twice");
        }

        if (l.kind != LayerKind::Input) {
            l.inputs = split(require(keys, "in", l), ',');
            const std::size_t want = l.kind == LayerKind::Add ? 2 : 1;
            if (l.inputs.size() != want)
                throw ParseError(lineno, to_string(l.kind) + " layer '" + l.id + "' takes " + std::to_string(want) +
                                             " input(s), got " + std::to_string(l.inputs.size()));
            for (const auto& in : l.inputs) {
                if (in == l.id) throw ParseError(lineno, "cycle: layer '" + l.id + "' reads its own output");
                auto it = defined_at.find(in);
                if (it == defined_at.end()) throw ParseError(lineno, "reference to undefined layer '" + in + "'");
                if (it->second >= lineno)
                    throw ParseError(lineno, "layer '" + l.id + "' reads '" + in + "', defined later on line " +
                                                 std::to_string(it->second) + " (cycle or out-of-order layer)");
            }
        }

        switch (l.kind) {
        case LayerKind::Input:
            l.shape = {1, parse_size(require(keys, "h", l), "h", lineno), parse_size(require(keys, "w", l), "w", lineno),
                       parse_size(require(keys, "c", l), "c", lineno)};
            if (l.shape.h == 0 || l.shape.w == 0 || l.shape.c == 0)
                throw ParseError(lineno, "input extents must be positive");
            break;
        case LayerKind::Conv: {
            std::tie(l.conv.kh, l.conv.kw) = take_pair(keys, "k", "kh", "kw", 0, lineno);
            std::tie(l.conv.sh, l.conv.sw) = take_pair(keys, "s", "sh", "sw", 1, lineno);
            std::tie(l.conv.ph, l.conv.pw) = take_pair(keys, "p", "ph", "pw", 0, lineno);
            if (l.conv.kh == 0 || l.conv.kw == 0) throw ParseError(lineno, "conv '" + l.id + "' needs k= (or kh=, kw=)");
            l.conv.cout = parse_size(require(keys, "out", l), "out", lineno);
            if (l.conv.cout == 0) throw ParseError(lineno, "conv out= must be positive");
            try {
                if (auto v = take(keys, "algo")) l.algorithm = parse_algorithm(*v);
                if (auto v = take(keys, "params")) l.params = parse_params(*v);
                if (auto v = take(keys, "variant")) l.variant = parse_variant(*v);
            } catch (const ConfigError& e) {
                throw ParseError(lineno, e.what());
            }
            break;
        }
        case LayerKind::BatchNorm:
            if (auto v = take(keys, "eps")) l.eps = parse_float(*v, "eps", lineno);
            break;
        case LayerKind::Relu:
        case LayerKind::Add:
            break;
        case LayerKind::Pool: {
            try {
                l.pool.mode = parse_pool_mode(require(keys, "mode", l));
            } catch (const ConfigError& e) {
                throw ParseError(lineno, e.what());
            }
            if (auto g = take(keys, "global")) {
                if (*g != "1" && *g != "true" && *g != "0" && *g != "false")
                    throw ParseError(lineno, "global must be 0/1 or true/false");
                l.pool.global = *g == "1" || *g == "true";
            }
            std::tie(l.pool.kh, l.pool.kw) = take_pair(keys, "k", "kh", "kw", l.pool.global ? 1 : 0, lineno);
            std::tie(l.pool.sh, l.pool.sw) = take_pair(keys, "s", "sh", "sw", 0, lineno);
            std::tie(l.pool.ph, l.pool.pw) = take_pair(keys, "p", "ph", "pw", 0, lineno);
            if (!l.pool.global && (l.pool.kh == 0 || l.pool.kw == 0))
                throw ParseError(lineno, "pool '" + l.id + "' needs k= or global=1");
            if (l.pool.sh == 0) l.pool.sh = l.pool.kh;
            if (l.pool.sw == 0) l.pool.sw = l.pool.kw;
            break;
        }
        case LayerKind::Dense:
            l.units = parse_size(require(keys, "out", l), "out", lineno);
            if (l.units == 0) throw ParseError(lineno, "dense out= must be positive");
            break;
        }
        if (!keys.empty())
            throw ParseError(lineno, "unknown key '" + keys.begin()->first + "' for " + to_string(l.kind) + " layer");

        m.layers.push_back(std::move(l));
        annotate_shape(m, m.layers.back());
    }

    if (m.layers.front().kind != LayerKind::Input)
        throw ParseError(m.layers.front().line, "the first layer must be the input layer");
    for (std::size_t i = 1; i < m.layers.size(); ++i)
        if (m.layers[i].kind == LayerKind::Input)
            throw ParseError(m.layers[i].line, "only one input layer is allowed");
    if (m.layers.size() == 1) throw ParseError(m.layers.front().line, "model has no layers after its input");
    const auto counts = m.consumer_counts();
    for (std::size_t i = 0; i + 1 < m.layers.size(); ++i)
        if (counts[i] == 0)
            throw ParseError(m.layers[i].line, "output of layer '" + m.layers[i].id +
                                                   "' is never used (the model must have a single output, its last layer)");
    return m;
}

ModelSpec load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open model file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    ModelSpec m = parse_model(ss.str());
    if (!m.weights_path.empty() && std::filesystem::path(m.weights_path).is_relative())
        m.weights_path = (std::filesystem::path(path).parent_path() / m.weights_path).string();
    return m;
}

ModelSpec clear_fusion(const ModelSpec& m) {
    ModelSpec out = m;
    for (auto& l : out.layers) {
        l.fused = EpilogueKind::None;
        l.absorbed.clear();
        l.fused_into.clear();
    }
    return out;
}

ModelSpec plan_fusion(const ModelSpec& m) {
    ModelSpec out = clear_fusion(m);
    const auto counts = out.consumer_counts();
    // Sole consumer of layer i, or npos.
    std::vector<std::size_t> sole(out.layers.size(), std::string::npos);
    for (std::size_t j = 0; j < out.layers.size(); ++j)
        for (const auto& in : out.layers[j].inputs) {
            const std::size_t i = out.find(in);
            if (counts[i] == 1) sole[i] = j;
        }

    for (std::size_t i = 0; i < out.layers.size(); ++i) {
        LayerSpec& conv = out.layers[i];
        if (conv.kind != LayerKind::Conv || sole[i] == std::string::npos) continue;
        std::size_t next = sole[i];
        if (out.layers[next].kind == LayerKind::BatchNorm) {
            conv.fused = EpilogueKind::BatchNorm;
            conv.absorbed.push_back(out.layers[next].id);
            out.layers[next].fused_into = conv.id;
            next = sole[next];
            if (next != std::string::npos && out.layers[next].kind == LayerKind::Relu) {
                conv.fused = EpilogueKind::BatchNormRelu;
                conv.absorbed.push_back(out.layers[next].id);
                out.layers[next].fused_into = conv.id;
            }
        } else if (out.layers[next].kind == LayerKind::Relu) {
            conv.fused = EpilogueKind::Relu;
            conv.absorbed.push_back(out.layers[next].id);
            out.layers[next].fused_into = conv.id;
        }
    }
    return out;
}

FusionSummary summarize_fusion(const ModelSpec& m) {
    FusionSummary s;
    for (const auto& l : m.layers) {
        const bool absorbed = !l.fused_into.empty();
        switch (l.kind) {
        case LayerKind::Conv:
            ++s.convs;
            if (l.fused != EpilogueKind::None) ++s.fused_convs;
            break;
        case LayerKind::BatchNorm:
            ++s.batchnorms;
            if (absorbed) ++s.fused_batchnorms;
            break;
        case LayerKind::Relu:
            ++s.relus;
            if (absorbed) ++s.fused_relus;
            break;
        default:
            break;
        }
    }
    return s;
}

std::size_t weight_count(const ModelSpec& m, const LayerSpec& l) {
    switch (l.kind) {
    case LayerKind::Conv:
        return l.conv.cout * l.conv.kh * l.conv.kw * l.conv.cin;
    case LayerKind::BatchNorm:
        return 4 * l.shape.c;
    case LayerKind::Dense: {
        const Shape in = m.at(l.inputs[0]).shape;
        return l.units * in.h * in.w * in.c + l.units;
    }
    default:
        return 0;
    }
}

const std::vector<float>& ModelWeights::at(const std::string& id) const {
    auto it = tensors.find(id);
    if (it == tensors.end()) throw ContractError("no weights for layer '" + id + "'");
    return it->second;
}

void ModelWeights::check(const ModelSpec& m) const {
    for (const auto& l : m.layers) {
        const std::size_t want = weight_count(m, l);
        if (want == 0) continue;
        const auto& w = at(l.id);
        if (w.size() != want)
            throw ContractError("layer '" + l.id + "' has " + std::to_string(w.size()) + " weights, expected " +
                                std::to_string(want));
    }
}

ModelWeights random_weights(const ModelSpec& m, std::uint64_t seed) {
    ModelWeights w;
    for (const auto& l : m.layers) {
        const std::size_t n = weight_count(m, l);
        if (n == 0) continue;
        std::vector<float> v(n);
        fill_uniform(v, layer_seed(seed, l.id), -0.1f, 0.1f);
        if (l.kind == LayerKind::BatchNorm) {
            const std::size_t c = l.shape.c;
            for (std::size_t i = 0; i < c; ++i) {
                v[i] += 1.0f;          // gamma
                v[3 * c + i] += 1.0f;  // var
            }
        }
        w.tensors.emplace(l.id, std::move(v));
    }
    return w;
}

void save_weights(const ModelSpec& m, const ModelWeights& w, const std::string& blob_path) {
    w.check(m);
    std::ofstream blob(blob_path, std::ios::binary);
    std::ofstream manifest(blob_path + ".manifest");
    if (!blob || !manifest) throw ConfigError("cannot write weights to '" + blob_path + "'");
    manifest << "# id offset length (float32 elements, little-endian)\n";
    std::size_t offset = 0;
    for (const auto& l : m.layers) {
        if (weight_count(m, l) == 0) continue;
        std::vector<float> v = w.at(l.id);
        if constexpr (std::endian::native == std::endian::big)
            for (float& f : v) f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
        blob.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
        manifest << l.id << ' ' << offset << ' ' << v.size() << '\n';
        offset += v.size();
    }
    if (!blob || !manifest) throw ConfigError("failed writing weights to '" + blob_path + "'");
}

ModelWeights load_weights(const ModelSpec& m, const std::string& blob_path) {
    std::ifstream manifest(blob_path + ".manifest");
    if (!manifest) throw ConfigError("cannot open weight manifest '" + blob_path + ".manifest'");
    std::ifstream blob(blob_path, std::ios::binary | std::ios::ate);
    if (!blob) throw ConfigError("cannot open weight blob '" + blob_path + "'");
    const auto blob_floats = static_cast<std::size_t>(blob.tellg()) / sizeof(float);

    ModelWeights w;
    std::string raw;
    for (std::size_t lineno = 1; std::getline(manifest, raw); ++lineno) {
        if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        std::istringstream fields(raw);
        std::vector<std::string> tok;
        for (std::string t; fields >> t;) tok.push_back(t);
        if (tok.empty()) continue;
        if (tok.size() != 3) throw ParseError(lineno, "manifest lines are 'id offset length'");
        const std::size_t off = parse_size(tok[1], "offset", lineno), len = parse_size(tok[2], "length", lineno);
        if (off > blob_floats || len > blob_floats - off)
            throw ParseError(lineno, "weights of '" + tok[0] + "' extend past the end of the blob");
        std::vector<float> v(len);
        blob.seekg(static_cast<std::streamoff>(off * sizeof(float)));
        blob.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(len * sizeof(float)));
        if constexpr (std::endian::native == std::endian::big)
            for (float& f : v) f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
        if (!w.tensors.emplace(tok[0], std::move(v)).second)
            throw ParseError(lineno, "layer '" + tok[0] + "' listed twice");
    }
    w.check(m);
    return w;
}

ModelWeights model_weights(const ModelSpec& m) {
    return m.weights_path.empty() ? random_weights(m, m.seed) : load_weights(m, m.weights_path);
}

std::string to_string(TimingKind k) {
    switch (k) {
    case TimingKind::Conv2D: return "Conv2D";
    case TimingKind::BatchNorm: return "BatchNorm";
    case TimingKind::ReLU: return "ReLU";
    case TimingKind::Pooling: return "Pooling";
    case TimingKind::Add: return "Add";
    case TimingKind::Dense: return "Dense";
    }
    return "?";
}

std::optional<TimingKind> parse_timing_kind(const std::string& text) {
    for (TimingKind k : kAllTimingKinds)
        if (text == to_string(k)) return k;
    return std::nullopt;
}

TimingKind timing_kind(LayerKind k) {
    switch (k) {
    case LayerKind::BatchNorm: return TimingKind::BatchNorm;
    case LayerKind::Relu: return TimingKind::ReLU;
    case LayerKind::Pool: return TimingKind::Pooling;
    case LayerKind::Add: return TimingKind::Add;
    case LayerKind::Dense: return TimingKind::Dense;
    default: return TimingKind::Conv2D;
    }
}

double LayerTimingReport::kind_sum() const {
    double s = 0.0;
    for (double v : seconds) s += v;
    return s;
}

double LayerTimingReport::percent(TimingKind k) const {
    const double sum = kind_sum();
    return sum > 0.0 ? 100.0 * (*this)[k] / sum : 0.0;
}

double LayerTimingReport::images_per_second() const {
    return total_seconds > 0.0 ? static_cast<double>(batch) / total_seconds : 0.0;
}

std::string LayerTimingReport::to_csv() const {
    std::ostringstream os;
    os << "kind,seconds,percent\n";
    char buf[96];
    for (TimingKind k : kAllTimingKinds) {
        std::snprintf(buf, sizeof buf, "%s,%.9f,%.2f\n", to_string(k).c_str(), (*this)[k], percent(k));
        os << buf;
    }
    return os.str();
}

std::string LayerTimingReport::to_json() const {
    nlohmann::ordered_json j;
    j["batch"] = batch;
    j["total_seconds"] = total_seconds;
    j["images_per_s"] = images_per_second();
    nlohmann::ordered_json kinds = nlohmann::ordered_json::array();
    for (TimingKind k : kAllTimingKinds)
        kinds.push_back({{"kind", to_string(k)}, {"seconds", (*this)[k]}, {"percent", percent(k)}});
    j["kinds"] = kinds;
    return j.dump(2);
}

LayerTimingReport LayerTimingReport::from_json(const std::string& text) {
    LayerTimingReport r;
    try {
        const auto j = nlohmann::json::parse(text);
        r.batch = j.at("batch").get<std::size_t>();
        r.total_seconds = j.at("total_seconds").get<double>();
        for (const auto& e : j.at("kinds")) {
            const auto k = parse_timing_kind(e.at("kind").get<std::string>());
            if (!k) throw ParseError(0, "unknown timing kind '" + e.at("kind").get<std::string>() + "'");
            r[*k] = e.at("seconds").get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(0, std::string("timing report JSON: ") + e.what());
    }
    return r;
}

}  // namespace fuseconv
