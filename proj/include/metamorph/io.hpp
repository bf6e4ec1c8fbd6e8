// Grid files, landmark CSV and JSON reports.
//
// Grid file layout: one line of compact JSON
//   {"dim":2,"dtype":"f64","kind":"scalar","sizes":[64,64],"spacing":[1.0,1.0]}
// terminated by '\n', followed by the raw little-endian IEEE-754 payload,
// row-major with axis 0 slowest and vector components interleaved per voxel.
#pragma once

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <variant>

#include <json.hpp>

#include "metamorph/grid.hpp"

namespace metamorph {

enum class DType { F32, F64 };
enum class GridKind { Scalar, Vector, Mask };

using GridObject = std::variant<ScalarImage, VectorField, MaskImage>;

static_assert(std::endian::native == std::endian::little, "grid payloads are written in host order");

namespace detail {

inline std::string dtype_name(DType t) { return t == DType::F32 ? "f32" : "f64"; }
inline std::string kind_name(GridKind k) {
    switch (k) {
    case GridKind::Scalar: return "scalar";
    case GridKind::Vector: return "vector";
    case GridKind::Mask: return "mask";
    }
    return "scalar";
}

inline void write_grid(const std::filesystem::path &path, const GridDesc &g, GridKind kind, std::span<const double> data, DType dtype) {
    nlohmann::json header;
    header["dim"] = g.dim();
    header["sizes"] = g.sizes();
    header["spacing"] = g.spacings();
    header["dtype"] = dtype_name(dtype);
    header["kind"] = kind_name(kind);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
    const std::string text = header.dump() + "\n";
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (dtype == DType::F64) {
        os.write(reinterpret_cast<const char *>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    } else {
        std::vector<float> narrow(data.begin(), data.end());
        os.write(reinterpret_cast<const char *>(narrow.data()), static_cast<std::streamsize>(narrow.size() * sizeof(float)));
    }
    if (!os) throw Error(ErrorCode::IoError, "write failed for '" + path.string() + "'");
}

} // namespace detail

inline void save_grid(const ScalarImage &img, const std::filesystem::path &path, DType dtype = DType::F64) {
    detail::write_grid(path, img.grid(), GridKind::Scalar, img.values(), dtype);
}
inline void save_grid(const VectorField &vf, const std::filesystem::path &path, DType dtype = DType::F64) {
    detail::write_grid(path, vf.grid(), GridKind::Vector, vf.values(), dtype);
}
inline void save_grid(const MaskImage &m, const std::filesystem::path &path, DType dtype = DType::F64) {
    detail::write_grid(path, m.grid(), GridKind::Mask, m.values(), dtype);
}

inline GridObject load_grid(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(is, line)) throw Error(ErrorCode::MalformedHeader, path.string() + ": missing header line");

    GridDesc grid;
    DType dtype{};
    GridKind kind{};
    try {
        const auto h = nlohmann::json::parse(line);
        const int dim = h.at("dim").get<int>();
        auto sizes = h.at("sizes").get<std::vector<int>>();
        auto spacing = h.at("spacing").get<std::vector<double>>();
        if (static_cast<int>(sizes.size()) != dim) throw Error(ErrorCode::MalformedHeader, "dim does not match sizes");
        const auto dt = h.at("dtype").get<std::string>();
        const auto kd = h.at("kind").get<std::string>();
        if (dt == "f32") dtype = DType::F32;
        else if (dt == "f64") dtype = DType::F64;
        else throw Error(ErrorCode::MalformedHeader, "unknown dtype '" + dt + "'");
        if (kd == "scalar") kind = GridKind::Scalar;
        else if (kd == "vector") kind = GridKind::Vector;
        else if (kd == "mask") kind = GridKind::Mask;
        else throw Error(ErrorCode::MalformedHeader, "unknown kind '" + kd + "'");
        grid = GridDesc(std::move(sizes), std::move(spacing));
    } catch (const Error &e) {
        throw Error(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
    }

    const std::size_t comps = kind == GridKind::Vector ? static_cast<std::size_t>(grid.dim()) : 1;
    const std::size_t count = grid.voxel_count() * comps;
    const std::size_t width = dtype == DType::F64 ? sizeof(double) : sizeof(float);
    std::string payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (payload.size() != count * width)
        throw Error(ErrorCode::LengthMismatch, path.string() + ": payload has " + std::to_string(payload.size()) +
                                                   " bytes, expected " + std::to_string(count * width));
    std::vector<double> data(count);
    if (dtype == DType::F64) {
        std::memcpy(data.data(), payload.data(), payload.size());
    } else {
        std::vector<float> narrow(count);
        std::memcpy(narrow.data(), payload.data(), payload.size());
        std::copy(narrow.begin(), narrow.end(), data.begin());
    }
    switch (kind) {
    case GridKind::Scalar: return ScalarImage(grid, std::move(data));
    case GridKind::Vector: return VectorField(grid, std::move(data));
    case GridKind::Mask:
        try {
            return MaskImage(grid, std::move(data));
        } catch (const Error &e) {
            throw Error(ErrorCode::RangeError, path.string() + ": " + e.what());
        }
    }
    throw Error(ErrorCode::MalformedHeader, "unreachable grid kind");
}

template <class T> T load_grid_as(const std::filesystem::path &path) {
    GridObject obj = load_grid(path);
    if (auto *p = std::get_if<T>(&obj)) return std::move(*p);
    throw Error(ErrorCode::MalformedHeader, path.string() + ": unexpected grid kind");
}

// ---------------------------------------------------------------------------
// Landmarks CSV: header `id,x0,...,x{d-1}`, one row per point.

namespace detail {
inline std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline std::vector<std::string> split_csv(const std::string &line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}
} // namespace detail

inline void save_landmarks(const LandmarkSet &set, const std::filesystem::path &path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
    os << "id";
    for (int j = 0; j < set.dim; ++j) os << ",x" << j;
    os << '\n';
    for (std::size_t i = 0; i < set.size(); ++i) {
        os << (i < set.labels.size() && !set.labels[i].empty() ? set.labels[i] : std::to_string(i));
        for (int j = 0; j < set.dim; ++j) os << ',' << detail::format_double(set.points[i][static_cast<std::size_t>(j)]);
        os << '\n';
    }
    if (!os) throw Error(ErrorCode::IoError, "write failed for '" + path.string() + "'");
}

inline LandmarkSet load_landmarks(const std::filesystem::path &path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(is, line)) throw Error(ErrorCode::BadCsv, path.string() + ": empty file");
    const auto header = detail::split_csv(line);
    if (header.size() < 3 || header.size() > 4 || header[0] != "id")
        throw Error(ErrorCode::BadCsv, path.string() + ": header must be id,x0,...");
    LandmarkSet set;
    set.dim = static_cast<int>(header.size()) - 1;
    int row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = detail::split_csv(line);
        if (cells.size() != header.size())
            throw Error(ErrorCode::BadCsv, path.string() + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                               " columns, expected " + std::to_string(header.size()));
        Point p{0, 0, 0};
        for (int j = 0; j < set.dim; ++j) {
            const std::string &c = cells[static_cast<std::size_t>(j) + 1];
            double x = 0.0;
            const auto res = std::from_chars(c.data(), c.data() + c.size(), x);
            if (res.ec != std::errc() || res.ptr != c.data() + c.size() || !std::isfinite(x))
                throw Error(ErrorCode::BadCsv, path.string() + ": bad number '" + c + "' on row " + std::to_string(row));
            p[static_cast<std::size_t>(j)] = x;
        }
        set.points.push_back(p);
        set.labels.push_back(cells[0]);
    }
    return set;
}

// ---------------------------------------------------------------------------

/// Binary PGM of a 2D image, or of the middle slice along axis 0 of a 3D image.
/// Values are min-max scaled to 8 bits, so this is lossy and for inspection only.
inline void save_pgm(const ScalarImage &img, const std::filesystem::path &path) {
    const GridDesc &g = img.grid();
    const int rows = g.size(g.dim() - 2), cols = g.size(g.dim() - 1);
    const std::size_t offset = g.dim() == 3 ? static_cast<std::size_t>(g.size(0) / 2) * g.stride(0) : 0;
    const auto slice = img.values().subspan(offset, static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
    const auto [lo, hi] = std::minmax_element(slice.begin(), slice.end());
    const double range = *hi - *lo;
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
    os << "P5\n" << cols << ' ' << rows << "\n255\n";
    for (double x : slice) {
        const double t = range > 0.0 ? (x - *lo) / range : 0.0;
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t))));
    }
    if (!os) throw Error(ErrorCode::IoError, "write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------

/// Pretty-printed JSON (keys sorted, two-space indent).
inline void save_report(const nlohmann::json &report, const std::filesystem::path &path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
    os << report.dump(2) << '\n';
    if (!os) throw Error(ErrorCode::IoError, "write failed for '" + path.string() + "'");
}

inline nlohmann::json load_json(const std::filesystem::path &path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
    }
}

} // namespace metamorph
