#pragma once

// Persistence: versioned binary Q-tables and the CSV schemas emitted by the
// harness. Numbers in CSV files are printed with 17 significant digits so a
// re-run with the same seed reproduces the bytes exactly.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qdiff/errors.hpp"
#include "qdiff/evaluate.hpp"
#include "qdiff/qlearn.hpp"
#include "qdiff/quantize.hpp"

namespace qdiff {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// FNV-1a, used for config hashes and file fingerprints.
inline std::uint64_t fnv1a(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Q-table binary format, version 1 (little endian):
//   char[8]  "QDQTABLE"
//   u32      version
//   u64 d, f64 N, u64 k, f64 center[d], f64 overflow_rep[d]
//   u64 action_dim, u64 n_points, f64 box[action_dim][2], f64 points[n_points][action_dim]
//   u64 n_states, u64 n_actions
//   f64 values[n_states * n_actions], u64 visits[n_states * n_actions]

inline constexpr char kQTableMagic[8] = {'Q', 'D', 'Q', 'T', 'A', 'B', 'L', 'E'};
inline constexpr std::uint32_t kQTableVersion = 1;

struct PersistedQTable {
    QTable table;
    StateQuantizer quantizer;
    ActionGrid grid;
};

namespace detail {

class ByteWriter {
public:
    template <class T>
    void put(T v) {
        char raw[sizeof(T)];
        std::memcpy(raw, &v, sizeof(T));
        bytes_.append(raw, sizeof(T));
    }
    void put_bytes(const char* p, std::size_t n) { bytes_.append(p, n); }
    const std::string& bytes() const noexcept { return bytes_; }

private:
    std::string bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    template <class T>
    T get(const char* what) {
        if (pos_ + sizeof(T) > bytes_.size()) throw FormatError(std::string("qtable: truncated file while reading ") + what);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::uint64_t get_count(const char* what, std::uint64_t limit = 1ull << 32) {
        const auto v = get<std::uint64_t>(what);
        if (v > limit) throw FormatError(std::string("qtable: implausible ") + what);
        return v;
    }

    bool at_end() const noexcept { return pos_ == bytes_.size(); }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_qtable(const QTable& q, const StateQuantizer& quantizer, const ActionGrid& grid) {
    if (q.n_states != quantizer.size()) throw InvalidConfig("qtable state count does not match quantizer");
    if (q.n_actions != grid.size()) throw InvalidConfig("qtable action count does not match action grid");
    detail::ByteWriter w;
    w.put_bytes(kQTableMagic, sizeof kQTableMagic);
    w.put(kQTableVersion);
    w.put<std::uint64_t>(quantizer.dim());
    w.put(quantizer.side());
    w.put<std::uint64_t>(quantizer.bins_per_axis());
    for (double c : quantizer.center()) w.put(c);
    for (double c : quantizer.overflow_representative()) w.put(c);
    w.put<std::uint64_t>(grid.dim());
    w.put<std::uint64_t>(grid.size());
    for (const auto& iv : grid.box) {
        w.put(iv.lo);
        w.put(iv.hi);
    }
    for (const auto& p : grid.points)
        for (double v : p) w.put(v);
    w.put<std::uint64_t>(q.n_states);
    w.put<std::uint64_t>(q.n_actions);
    for (double v : q.values) w.put(v);
    for (auto v : q.visits) w.put(v);
    return w.bytes();
}

inline PersistedQTable decode_qtable(std::string_view bytes) {
    detail::ByteReader r(bytes);
    char magic[8];
    for (char& c : magic) c = r.get<char>("magic");
    if (std::memcmp(magic, kQTableMagic, sizeof magic) != 0) throw FormatError("qtable: bad magic header");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kQTableVersion)
        throw FormatError("qtable: unsupported version " + std::to_string(version));

    const auto d = r.get_count("quantizer dimension", 64);
    const auto side = r.get<double>("quantizer side");
    const auto k = r.get_count("quantizer bins per axis");
    Vec center(d), over(d);
    for (auto& c : center) c = r.get<double>("quantizer center");
    for (auto& c : over) c = r.get<double>("overflow representative");
    const auto adim = r.get_count("action dimension", 64);
    const auto npts = r.get_count("action count");
    ActionGrid grid;
    grid.box.resize(adim);
    for (auto& iv : grid.box) {
        iv.lo = r.get<double>("action box");
        iv.hi = r.get<double>("action box");
    }
    grid.points.assign(npts, Vec(adim));
    for (auto& p : grid.points)
        for (auto& v : p) v = r.get<double>("action points");
    const auto ns = r.get_count("state count");
    const auto na = r.get_count("action count");

    StateQuantizer quantizer = [&] {
        try {
            return StateQuantizer(d, side, k, center, over);
        } catch (const InvalidConfig& e) {
            throw FormatError(std::string("qtable: bad quantizer descriptor: ") + e.what());
        }
    }();
    if (ns != quantizer.size()) throw FormatError("qtable: state count does not match quantizer descriptor");
    if (na != grid.size()) throw FormatError("qtable: action count does not match action grid");

    QTable q(ns, na);
    for (auto& v : q.values) v = r.get<double>("values");
    for (auto& v : q.visits) v = r.get<std::uint64_t>("visits");
    if (!r.at_end()) throw FormatError("qtable: trailing bytes after visits");
    return {std::move(q), std::move(quantizer), std::move(grid)};
}

inline void save_qtable(const std::filesystem::path& path, const QTable& q, const StateQuantizer& quantizer,
                        const ActionGrid& grid) {
    write_file(path, encode_qtable(q, quantizer, grid));
}

inline PersistedQTable load_qtable(const std::filesystem::path& path) { return decode_qtable(read_file(path)); }

/// Loads and checks the stored descriptors against the expected ones,
/// naming the first field that differs.
inline PersistedQTable load_qtable(const std::filesystem::path& path, const StateQuantizer& expected_q,
                                   const ActionGrid& expected_grid) {
    auto p = load_qtable(path);
    auto mismatch = [](const std::string& field, const std::string& got, const std::string& want) {
        return FormatError("qtable: descriptor mismatch in " + field + " (file " + got + ", expected " + want + ")");
    };
    const auto& q = p.quantizer;
    if (q.dim() != expected_q.dim())
        throw mismatch("quantizer dimension d", std::to_string(q.dim()), std::to_string(expected_q.dim()));
    if (q.bins_per_axis() != expected_q.bins_per_axis())
        throw mismatch("quantizer bins per axis k", std::to_string(q.bins_per_axis()),
                       std::to_string(expected_q.bins_per_axis()));
    if (q.side() != expected_q.side())
        throw mismatch("quantizer side N", format_number(q.side()), format_number(expected_q.side()));
    if (q.center() != expected_q.center()) throw mismatch("quantizer center", "differs", "configured center");
    if (q.overflow_representative() != expected_q.overflow_representative())
        throw mismatch("overflow representative", "differs", "configured representative");
    if (p.grid.dim() != expected_grid.dim())
        throw mismatch("action dimension", std::to_string(p.grid.dim()), std::to_string(expected_grid.dim()));
    if (p.grid.size() != expected_grid.size())
        throw mismatch("action count n_u", std::to_string(p.grid.size()), std::to_string(expected_grid.size()));
    if (!(p.grid == expected_grid)) throw mismatch("action grid points", "differs", "configured grid");
    return p;
}

// ---------------------------------------------------------------------------
// CSV schemas

inline constexpr const char* kEvalCsvMagic = "#qdiff-eval,1";
inline constexpr const char* kEvalCsvHeader =
    "experiment_id,criterion,h,M,n_u,factor,mean,std_error,n_replicas,horizon,seed";

struct EvalRow {
    std::string experiment_id;
    Criterion criterion = Criterion::average;
    double h = 0.0;
    std::size_t M = 0;
    std::size_t n_u = 0;
    double factor = 0.0;
    CostEstimate estimate;
    std::uint64_t seed = 0;
};

inline std::string eval_csv(const std::vector<EvalRow>& rows) {
    std::ostringstream out;
    out << kEvalCsvMagic << '\n' << kEvalCsvHeader << '\n';
    for (const auto& r : rows) {
        out << r.experiment_id << ',' << (r.criterion == Criterion::discounted ? "discounted" : "average") << ','
            << format_number(r.h) << ',' << r.M << ',' << r.n_u << ',' << format_number(r.factor) << ','
            << format_number(r.estimate.mean) << ',' << format_number(r.estimate.std_error) << ','
            << r.estimate.n_replicas << ',' << format_number(r.estimate.horizon) << ',' << r.seed << '\n';
    }
    return out.str();
}

inline constexpr const char* kBoundsCsvMagic = "#qdiff-bounds,1";
inline constexpr const char* kBoundsCsvHeader = "M,N,h,beta,general,collapsed,exponent";

struct BoundRow {
    double M = 0.0;
    double N = 0.0;
    double h = 0.0;
    double beta = 0.0;
    double general = 0.0;
    double collapsed = 0.0;
    double exponent = 0.0;
};

inline std::string bounds_csv(const std::vector<BoundRow>& rows) {
    std::ostringstream out;
    out << kBoundsCsvMagic << '\n' << kBoundsCsvHeader << '\n';
    for (const auto& r : rows)
        out << format_number(r.M) << ',' << format_number(r.N) << ',' << format_number(r.h) << ','
            << format_number(r.beta) << ',' << format_number(r.general) << ',' << format_number(r.collapsed) << ','
            << format_number(r.exponent) << '\n';
    return out.str();
}

}  // namespace qdiff
