#include "milo/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace milo {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "MILO";

template <typename T>
void put_le(std::string& out, T value)
{
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
    }
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T get_le(const char* what)
    {
        need(sizeof(T), what);
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return v;
    }

    std::string_view take(std::size_t n, const char* what)
    {
        need(n, what);
        const std::string_view s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) const
    {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("container truncated while reading ") + what);
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t checked_extent(Index n)
{
    if (n < 0 || n > static_cast<Index>(UINT32_MAX)) {
        throw FormatError("array extent out of u32 range");
    }
    return static_cast<std::uint32_t>(n);
}

} // namespace

void Container::add(std::string name, const Matrix& m)
{
    NamedArray a{std::move(name), {checked_extent(m.rows()), checked_extent(m.cols())}, {}};
    a.data.reserve(static_cast<std::size_t>(m.size()));
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) a.data.push_back(m(r, c));
    }
    arrays.push_back(std::move(a));
}

void Container::add_vector(std::string name, const Vector& v)
{
    arrays.push_back({std::move(name), {checked_extent(v.size())}, std::vector<double>(v.data(), v.data() + v.size())});
}

const NamedArray& Container::at(std::string_view name) const
{
    const auto it = std::find_if(arrays.begin(), arrays.end(), [&](const NamedArray& a) { return a.name == name; });
    if (it == arrays.end()) {
        throw FormatError("container has no array named '" + std::string(name) + "'");
    }
    return *it;
}

bool Container::contains(std::string_view name) const
{
    return std::any_of(arrays.begin(), arrays.end(), [&](const NamedArray& a) { return a.name == name; });
}

Matrix Container::matrix(std::string_view name) const
{
    const NamedArray& a = at(name);
    if (a.extents.size() == 1) {
        return Eigen::Map<const Vector>(a.data.data(), static_cast<Index>(a.extents[0]));
    }
    if (a.extents.size() != 2) {
        throw FormatError("array '" + a.name + "' has rank " + std::to_string(a.extents.size()) + ", expected 1 or 2");
    }
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMajor>(a.data.data(), static_cast<Index>(a.extents[0]), static_cast<Index>(a.extents[1]));
}

Vector Container::vector(std::string_view name) const
{
    const Matrix m = matrix(name);
    if (m.cols() != 1 && m.rows() != 1) {
        throw FormatError("array '" + std::string(name) + "' is not a vector");
    }
    return Eigen::Map<const Vector>(m.data(), m.size());
}

std::string encode(const Container& c)
{
    std::string out(kMagic);
    put_le<std::uint32_t>(out, kContainerVersion);
    const std::string meta = c.metadata.dump();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
    out += meta;
    for (const NamedArray& a : c.arrays) {
        if (a.name.size() > UINT16_MAX) throw FormatError("array name too long: " + a.name);
        if (a.extents.size() > UINT8_MAX) throw FormatError("array rank too large: " + a.name);
        std::size_t count = 1;
        for (auto e : a.extents) count *= e;
        if (count != a.data.size()) {
            throw FormatError("array '" + a.name + "' extents do not match its payload");
        }
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(a.name.size()));
        out += a.name;
        out.push_back(static_cast<char>(a.extents.size()));
        for (auto e : a.extents) put_le<std::uint32_t>(out, e);
        for (double v : a.data) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

Container decode(std::string_view bytes)
{
    Reader r(bytes);
    if (bytes.size() < kMagic.size() || r.take(kMagic.size(), "magic") != kMagic) {
        throw FormatError("not a MILO container (bad magic)");
    }
    const auto version = r.get_le<std::uint32_t>("version");
    if (version != kContainerVersion) {
        throw FormatError("unsupported container version " + std::to_string(version));
    }
    const auto meta_len = r.get_le<std::uint32_t>("metadata length");
    Container c;
    try {
        c.metadata = json::parse(r.take(meta_len, "metadata"));
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("container metadata is not valid JSON: ") + e.what());
    }
    while (!r.done()) {
        NamedArray a;
        const auto name_len = r.get_le<std::uint16_t>("array name length");
        a.name = std::string(r.take(name_len, "array name"));
        const auto rank = r.get_le<std::uint8_t>("array rank");
        std::size_t count = 1;
        for (unsigned i = 0; i < rank; ++i) {
            a.extents.push_back(r.get_le<std::uint32_t>("array extent"));
            count *= a.extents.back();
        }
        a.data.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            a.data.push_back(std::bit_cast<double>(r.get_le<std::uint64_t>("array payload")));
        }
        c.arrays.push_back(std::move(a));
    }
    return c;
}

void write_text(const std::filesystem::path& path, std::string_view text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        throw std::runtime_error("failed writing '" + path.string() + "'");
    }
}

std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open '" + path.string() + "' for reading");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_container(const std::filesystem::path& path, const Container& c) { write_text(path, encode(c)); }

Container read_container(const std::filesystem::path& path) { return decode(read_text(path)); }

Container to_container(const CoefficientSet& c)
{
    Container out;
    out.metadata = {{"kind", "coefficients"}, {"family", to_string(c.family)}, {"n", c.n}, {"m", c.m},
                    {"seed", c.seed}};
    out.add("Q", c.Q);
    out.add_vector("p", c.p);
    out.add("A", c.A);
    return out;
}

CoefficientSet coefficients_from(const Container& c)
{
    if (c.metadata.value("kind", "") != "coefficients") {
        throw FormatError("container does not hold coefficients");
    }
    const Family family = parse_family(c.metadata.at("family").get<std::string>());
    const Index n = c.metadata.at("n").get<Index>();
    const Index m = c.metadata.at("m").get<Index>();
    CoefficientSet out = build_family(family, family == Family::Rosenbrock2D ? 1 : n, m,
                                      c.metadata.at("seed").get<std::uint64_t>());
    out.Q = c.matrix("Q");
    out.p = c.vector("p");
    out.A = c.matrix("A");
    return out;
}

Container instances_container(const CoefficientSet& coeffs, const Matrix& params, std::string_view split)
{
    Container out;
    out.metadata = {{"kind", "instances"}, {"family", to_string(coeffs.family)}, {"split", split},
                    {"count", params.rows()}, {"n_param", coeffs.dims.n_param}};
    out.add("xi", params);
    return out;
}

Matrix instances_from(const Container& c, const CoefficientSet& coeffs)
{
    if (c.metadata.value("kind", "") != "instances") {
        throw FormatError("container does not hold instances");
    }
    if (c.metadata.at("family").get<std::string>() != to_string(coeffs.family)) {
        throw FormatError("instance family '" + c.metadata.at("family").get<std::string>() +
                          "' does not match coefficients '" + to_string(coeffs.family) + "'");
    }
    Matrix xi = c.matrix("xi");
    if (xi.rows() > 0 && xi.cols() != coeffs.dims.n_param) {
        throw FormatError("instances have " + std::to_string(xi.cols()) + " parameters, expected " +
                          std::to_string(coeffs.dims.n_param));
    }
    if (xi.rows() == 0) {
        xi.resize(0, coeffs.dims.n_param);
    }
    return xi;
}

namespace {

json spec_json(const MlpSpec& s) { return {{"widths", s.widths}, {"batch_norm", s.batch_norm}, {"dropout", s.dropout}}; }

MlpSpec spec_from(const json& j)
{
    MlpSpec s{j.at("widths").get<std::vector<Index>>(), j.at("batch_norm").get<bool>(), j.at("dropout").get<double>()};
    s.validate();
    return s;
}

void add_mlp(Container& out, const std::string& prefix, const MlpWeights& w)
{
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const DenseLayer& layer = w.layers[l];
        const std::string base = prefix + "." + std::to_string(l) + ".";
        out.add(base + "weight", layer.weight);
        out.add(base + "bias", layer.bias);
        if (layer.norm) {
            out.add(base + "gamma", layer.norm->gamma);
            out.add(base + "beta", layer.norm->beta);
            out.add(base + "running_mean", layer.norm->running_mean);
            out.add(base + "running_var", layer.norm->running_var);
        }
    }
}

MlpWeights mlp_from(const Container& c, const std::string& prefix, const MlpSpec& spec)
{
    MlpWeights w;
    w.spec = spec;
    for (Index l = 0; l < spec.layer_count(); ++l) {
        const std::string base = prefix + "." + std::to_string(l) + ".";
        DenseLayer layer;
        layer.weight = c.matrix(base + "weight");
        layer.bias = c.matrix(base + "bias");
        const Index in = spec.widths[static_cast<std::size_t>(l)];
        const Index out = spec.widths[static_cast<std::size_t>(l + 1)];
        if (layer.weight.rows() != out || layer.weight.cols() != in || layer.bias.rows() != 1 ||
            layer.bias.cols() != out) {
            throw FormatError("layer '" + base + "' does not match its declared widths");
        }
        if (c.contains(base + "gamma")) {
            layer.norm = BatchNormParams{c.matrix(base + "gamma"), c.matrix(base + "beta"),
                                         c.matrix(base + "running_mean"), c.matrix(base + "running_var")};
        }
        w.layers.push_back(std::move(layer));
    }
    return w;
}

} // namespace

Container to_container(const ModelWeights& w)
{
    Container out;
    out.metadata = {{"kind", "weights"},
                    {"method", to_string(w.correction.method)},
                    {"temperature", w.correction.temperature},
                    {"slope", w.correction.slope},
                    {"solution_map", spec_json(w.solution_map.spec)},
                    {"correction_net", spec_json(w.correction_net.spec)}};
    add_mlp(out, "pi", w.solution_map);
    add_mlp(out, "delta", w.correction_net);
    return out;
}

ModelWeights weights_from(const Container& c)
{
    if (c.metadata.value("kind", "") != "weights") {
        throw FormatError("container does not hold weights");
    }
    ModelWeights w;
    w.correction.method = parse_method(c.metadata.at("method").get<std::string>());
    w.correction.temperature = c.metadata.at("temperature").get<double>();
    w.correction.slope = c.metadata.at("slope").get<double>();
    w.solution_map = mlp_from(c, "pi", spec_from(c.metadata.at("solution_map")));
    w.correction_net = mlp_from(c, "delta", spec_from(c.metadata.at("correction_net")));
    return w;
}

} // namespace milo
