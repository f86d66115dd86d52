#pragma once

// Dataset file format, version 1 (text, one record per line):
//
//   primo-dataset v1 dim_o=<int> dim_m=<int> classes=<int>
//   <id>,<label>,<x_o[0]>,...,<x_o[dim_o-1]>,<x_m[0]>,...,<x_m[dim_m-1]>
//   <id>,<label>,<x_o[0]>,...,<x_o[dim_o-1]>,NA
//
// <label> is a class index or "?" for an unlabelled record. An absent second
// modality is the literal token NA, never zeros. Numbers use the shortest
// decimal form that round-trips to the same float64. Blank lines are ignored.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "primo/errors.hpp"
#include "primo/rng.hpp"

namespace primo {

struct Example {
    std::uint64_t id = 0;
    std::vector<double> x_o;
    std::optional<std::vector<double>> x_m;
    std::optional<std::size_t> y;

    [[nodiscard]] bool complete() const noexcept { return x_m.has_value(); }
    [[nodiscard]] bool labelled() const noexcept { return y.has_value(); }

    friend bool operator==(const Example&, const Example&) = default;
};

struct DatasetSchema {
    std::size_t dim_o = 1;
    std::size_t dim_m = 1;
    std::size_t classes = 2;

    friend bool operator==(const DatasetSchema&, const DatasetSchema&) = default;
};

struct Dataset {
    DatasetSchema schema;
    std::vector<Example> examples;

    [[nodiscard]] std::size_t size() const noexcept { return examples.size(); }
    [[nodiscard]] std::size_t count_complete() const
    {
        return static_cast<std::size_t>(std::count_if(examples.begin(), examples.end(),
                                                      [](const Example& e) { return e.complete(); }));
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetSplit {
    Dataset train;
    Dataset test;
    std::optional<Dataset> validation;
};

/// Throws SchemaError naming the first offending record.
inline void validate(const Example& e, const DatasetSchema& schema)
{
    const auto where = " in record id " + std::to_string(e.id);
    if (e.x_o.size() != schema.dim_o)
        throw SchemaError("x_o has length " + std::to_string(e.x_o.size()) + ", expected " +
                          std::to_string(schema.dim_o) + where);
    if (e.x_m && e.x_m->size() != schema.dim_m)
        throw SchemaError("x_m has length " + std::to_string(e.x_m->size()) + ", expected " +
                          std::to_string(schema.dim_m) + where);
    if (e.y && *e.y >= schema.classes)
        throw SchemaError("label " + std::to_string(*e.y) + " outside [0, " + std::to_string(schema.classes) + ")" +
                          where);
}

inline void validate(const Dataset& ds)
{
    for (const auto& e : ds.examples)
        validate(e, ds.schema);
}

// ---------------------------------------------------------------------------
// Synthetic XOR

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

struct XorConfig {
    std::size_t n_samples = 40000;
    std::vector<Point2> centers{{-1.0, -1.0}, {-1.0, 1.0}, {1.0, -1.0}};
    double sigma = 0.5;
    std::vector<double> weights{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    double mask_prob = 0.5;      // applied to the training split
    double test_mask_prob = 0.0; // applied to the test split, independently
    double train_frac = 0.7;
    std::uint64_t seed = 0;

    void check() const
    {
        if (centers.empty() || centers.size() != weights.size())
            throw ContractError("XorConfig: centers and weights must be non-empty and equally long");
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0))
                throw ContractError("XorConfig: negative mixture weight");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw ContractError("XorConfig: mixture weights sum to " + std::to_string(total));
        if (!(sigma > 0.0))
            throw ContractError("XorConfig: sigma must be positive");
        if (!(mask_prob >= 0.0 && mask_prob <= 1.0) || !(test_mask_prob >= 0.0 && test_mask_prob <= 1.0))
            throw ContractError("XorConfig: mask probabilities must lie in [0, 1]");
        if (!(train_frac > 0.0 && train_frac < 1.0))
            throw ContractError("XorConfig: train_frac must lie in (0, 1)");
    }
};

/// Class 1 when the coordinates have strictly opposite signs.
inline std::size_t xor_label(double x_o, double x_m) noexcept
{
    const auto sign = [](double v) { return (v > 0.0) - (v < 0.0); };
    return sign(x_o) * sign(x_m) < 0 ? 1 : 0;
}

namespace stream {
inline constexpr std::uint64_t data = 0x64617461;     // "data"
inline constexpr std::uint64_t mask = 0x6d61736b;     // "mask"
inline constexpr std::uint64_t split = 0x73706c74;    // "splt"
inline constexpr std::uint64_t init = 0x696e6974;     // "init"
inline constexpr std::uint64_t train = 0x74726e;      // "trn"
inline constexpr std::uint64_t predict = 0x70726564;  // "pred"
inline constexpr std::uint64_t cluster = 0x636c7573;  // "clus"
} // namespace stream

/// Samples the Gaussian mixture with every example complete.
inline Dataset generate_xor(const XorConfig& cfg)
{
    cfg.check();
    Rng rng = Rng(cfg.seed).fork(stream::data);
    Dataset ds;
    ds.schema = {1, 1, 2};
    ds.examples.reserve(cfg.n_samples);
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        const Point2& c = cfg.centers[rng.categorical(cfg.weights)];
        const double x_o = rng.normal(c.x, cfg.sigma);
        const double x_m = rng.normal(c.y, cfg.sigma);
        ds.examples.push_back({i, {x_o}, std::vector<double>{x_m}, xor_label(x_o, x_m)});
    }
    return ds;
}

/// Drops each example's x_m independently with probability p.
inline Dataset apply_missingness(Dataset ds, double p, std::uint64_t seed)
{
    if (!(p >= 0.0 && p <= 1.0))
        throw ContractError("apply_missingness: probability " + std::to_string(p) + " outside [0, 1]");
    Rng rng = Rng(seed).fork(stream::mask);
    for (auto& e : ds.examples) {
        const double u = rng.uniform(); // one draw per example keeps streams aligned
        if (u < p)
            e.x_m.reset();
    }
    return ds;
}

/// Shuffled split into train/test (and validation when three fractions are given).
inline DatasetSplit split(const Dataset& ds, const std::vector<double>& fractions, std::uint64_t seed)
{
    if (fractions.size() < 2 || fractions.size() > 3)
        throw ContractError("split: expected 2 or 3 fractions");
    double total = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0))
            throw ContractError("split: negative fraction");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw ContractError("split: fractions sum to " + std::to_string(total));

    const std::size_t n = ds.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i)
        order[i] = i;
    Rng rng = Rng(seed).fork(stream::split);
    rng.shuffle(order);

    std::vector<std::size_t> counts;
    std::size_t assigned = 0;
    for (std::size_t k = 0; k + 1 < fractions.size(); ++k) {
        const auto c = static_cast<std::size_t>(std::floor(fractions[k] * static_cast<double>(n) + 1e-9));
        counts.push_back(std::min(c, n - assigned));
        assigned += counts.back();
    }
    counts.push_back(n - assigned);

    std::vector<Dataset> parts(fractions.size());
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        parts[k].schema = ds.schema;
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                     order.begin() + static_cast<std::ptrdiff_t>(cursor + counts[k]));
        std::sort(idx.begin(), idx.end());
        for (std::size_t i : idx)
            parts[k].examples.push_back(ds.examples[i]);
        cursor += counts[k];
    }
    DatasetSplit out;
    out.train = std::move(parts[0]);
    if (parts.size() == 3) {
        out.validation = std::move(parts[1]);
        out.test = std::move(parts[2]);
    } else {
        out.test = std::move(parts[1]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialisation

inline void append_number(std::string& out, double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

inline std::string format_record(const Example& e)
{
    std::string line = std::to_string(e.id);
    line += ',';
    line += e.y ? std::to_string(*e.y) : std::string("?");
    for (double v : e.x_o) {
        line += ',';
        append_number(line, v);
    }
    if (e.x_m) {
        for (double v : *e.x_m) {
            line += ',';
            append_number(line, v);
        }
    } else {
        line += ",NA";
    }
    return line;
}

inline void save(const Dataset& ds, const std::filesystem::path& path)
{
    validate(ds);
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw IoError("cannot open dataset for writing: " + path.string());
    os << "primo-dataset v1 dim_o=" << ds.schema.dim_o << " dim_m=" << ds.schema.dim_m
       << " classes=" << ds.schema.classes << '\n';
    for (const auto& e : ds.examples)
        os << format_record(e) << '\n';
    if (!os)
        throw IoError("failed writing dataset: " + path.string());
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line)
{
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        fields.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return fields;
}

template <class T>
bool parse_field(std::string_view text, T& out)
{
    while (!text.empty() && text.front() == ' ')
        text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\r'))
        text.remove_suffix(1);
    const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
    return res.ec == std::errc{} && res.ptr == text.data() + text.size();
}

inline std::size_t parse_header_value(const std::string& header, const std::string& key)
{
    std::istringstream is(header);
    std::string token;
    while (is >> token) {
        if (token.rfind(key + "=", 0) == 0) {
            std::size_t v = 0;
            if (parse_field(std::string_view(token).substr(key.size() + 1), v))
                return v;
        }
    }
    throw SchemaError("dataset header missing '" + key + "': " + header);
}

} // namespace detail

inline Dataset load(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw IoError("cannot open dataset: " + path.string());
    std::string header;
    if (!std::getline(is, header) || header.rfind("primo-dataset v1", 0) != 0)
        throw SchemaError(path.string() + ":1: expected header 'primo-dataset v1 ...'");

    Dataset ds;
    ds.schema.dim_o = detail::parse_header_value(header, "dim_o");
    ds.schema.dim_m = detail::parse_header_value(header, "dim_m");
    ds.schema.classes = detail::parse_header_value(header, "classes");

    std::string line;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        const auto fields = detail::split_commas(line);
        const auto where = [&](const std::string& id) {
            return path.string() + ":" + std::to_string(line_no) + " (record id " + id + "): ";
        };
        Example e;
        if (!detail::parse_field(fields[0], e.id))
            throw SchemaError(where(std::string(fields[0])) + "bad id");
        const std::string id_text = std::to_string(e.id);
        if (fields.size() < 2 + ds.schema.dim_o + 1)
            throw SchemaError(where(id_text) + "too few fields (" + std::to_string(fields.size()) + ")");
        if (fields[1] != "?") {
            std::size_t label = 0;
            if (!detail::parse_field(fields[1], label))
                throw SchemaError(where(id_text) + "bad label '" + std::string(fields[1]) + "'");
            e.y = label;
        }
        e.x_o.resize(ds.schema.dim_o);
        for (std::size_t k = 0; k < ds.schema.dim_o; ++k)
            if (!detail::parse_field(fields[2 + k], e.x_o[k]))
                throw SchemaError(where(id_text) + "bad x_o value '" + std::string(fields[2 + k]) + "'");
        const std::size_t rest = fields.size() - 2 - ds.schema.dim_o;
        if (rest == 1 && fields.back() == "NA") {
            // absent modality
        } else if (rest == ds.schema.dim_m) {
            std::vector<double> x_m(ds.schema.dim_m);
            for (std::size_t k = 0; k < ds.schema.dim_m; ++k)
                if (!detail::parse_field(fields[2 + ds.schema.dim_o + k], x_m[k]))
                    throw SchemaError(where(id_text) + "bad x_m value");
            e.x_m = std::move(x_m);
        } else {
            throw SchemaError(where(id_text) + "x_m has " + std::to_string(rest) + " values, expected " +
                              std::to_string(ds.schema.dim_m) + " or NA");
        }
        try {
            validate(e, ds.schema);
        } catch (const SchemaError& err) {
            throw SchemaError(where(id_text) + err.what());
        }
        ds.examples.push_back(std::move(e));
    }
    return ds;
}

} // namespace primo
