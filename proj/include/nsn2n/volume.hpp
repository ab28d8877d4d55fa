#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "nsn2n/common.hpp"

namespace nsn2n {

/// One 2-D image, row-major, indexed as (x, y) with x the column.
struct Slice {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    Slice() = default;
    Slice(int w, int h, float fill = 0.0f) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill)
    {
        if (w <= 0 || h <= 0) throw std::invalid_argument("slice dimensions must be positive");
    }
    Slice(int w, int h, std::vector<float> values) : width(w), height(h), data(std::move(values))
    {
        if (w <= 0 || h <= 0) throw std::invalid_argument("slice dimensions must be positive");
        if (data.size() != static_cast<std::size_t>(w) * h)
            throw std::invalid_argument("slice data length does not match width*height");
    }

    float& operator()(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    float operator()(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

    /// Replicate (clamp-to-edge) access.
    float clamped(int x, int y) const
    {
        return (*this)(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1));
    }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Slice& o) const { return width == o.width && height == o.height; }
    bool operator==(const Slice&) const = default;
};

/// A stack of equally sized slices along z.
struct Volume {
    std::vector<Slice> slices;
    /// (min, max) of the data before normalization.
    std::pair<float, float> value_range{0.0f, 1.0f};

    Volume() = default;
    explicit Volume(std::vector<Slice> s) : slices(std::move(s))
    {
        validate();
        value_range = intensity_range();
    }
    Volume(std::vector<Slice> s, std::pair<float, float> range) : slices(std::move(s)), value_range(range)
    {
        validate();
    }

    int depth() const { return static_cast<int>(slices.size()); }
    int width() const { return slices.empty() ? 0 : slices.front().width; }
    int height() const { return slices.empty() ? 0 : slices.front().height; }

    Slice& operator[](std::size_t i) { return slices[i]; }
    const Slice& operator[](std::size_t i) const { return slices[i]; }

    std::pair<float, float> intensity_range() const
    {
        float lo = std::numeric_limits<float>::infinity();
        float hi = -lo;
        for (const auto& s : slices)
            for (float v : s.data) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        return {lo, hi};
    }

    float max_value() const { return intensity_range().second; }

    bool same_shape(const Volume& o) const
    {
        return depth() == o.depth() && width() == o.width() && height() == o.height();
    }

    bool operator==(const Volume&) const = default;

    void validate() const
    {
        if (slices.size() < 2) throw std::invalid_argument("volume depth must be at least 2");
        for (const auto& s : slices)
            if (!s.same_shape(slices.front())) throw std::invalid_argument("volume slices differ in size");
    }
};

/// Per-volume min-max scaling to [0, 1]; the original range is recorded.
inline Volume normalize(const Volume& volume)
{
    const auto [lo, hi] = volume.intensity_range();
    if (!(hi > lo)) throw std::invalid_argument("degenerate intensity range");
    const double scale = 1.0 / (static_cast<double>(hi) - lo);
    Volume out = volume;
    for (auto& s : out.slices)
        for (float& v : s.data) v = static_cast<float>((static_cast<double>(v) - lo) * scale);
    out.value_range = {lo, hi};
    return out;
}

/// Bilinear resampling. Pixel centers of the source and target grids are laid
/// on the unit square with the outermost centers coinciding, so the four
/// corner pixels are carried over exactly and same-size resampling is the
/// identity.
inline Slice resample_slice(const Slice& slice, int new_width, int new_height)
{
    if (new_width < 2 || new_height < 2) throw std::invalid_argument("resample target must be at least 2x2");
    Slice out(new_width, new_height);
    const double sx = slice.width > 1 ? static_cast<double>(slice.width - 1) / (new_width - 1) : 0.0;
    const double sy = slice.height > 1 ? static_cast<double>(slice.height - 1) / (new_height - 1) : 0.0;
    for (int y = 0; y < new_height; ++y) {
        const double fy = y * sy;
        const int y0 = std::min(static_cast<int>(fy), slice.height - 1);
        const int y1 = std::min(y0 + 1, slice.height - 1);
        const double ty = fy - y0;
        for (int x = 0; x < new_width; ++x) {
            const double fx = x * sx;
            const int x0 = std::min(static_cast<int>(fx), slice.width - 1);
            const int x1 = std::min(x0 + 1, slice.width - 1);
            const double tx = fx - x0;
            const double top = slice(x0, y0) * (1.0 - tx) + slice(x1, y0) * tx;
            const double bottom = slice(x0, y1) * (1.0 - tx) + slice(x1, y1) * tx;
            out(x, y) = static_cast<float>(top * (1.0 - ty) + bottom * ty);
        }
    }
    return out;
}

inline Volume resample_volume(const Volume& volume, int new_width, int new_height)
{
    std::vector<Slice> slices;
    slices.reserve(volume.slices.size());
    for (const auto& s : volume.slices) slices.push_back(resample_slice(s, new_width, new_height));
    return Volume(std::move(slices), volume.value_range);
}

// ---------------------------------------------------------------------------
// On-disk format: <name>.json header next to a <name>.raw payload of
// little-endian float32 samples, slice-major then row-major.

namespace io {

inline constexpr int kVolumeVersion = 1;

/// Payload path belonging to a header path (extension replaced).
inline std::filesystem::path companion(const std::filesystem::path& header, const char* ext)
{
    auto p = header;
    p.replace_extension(ext);
    return p;
}

inline void write_f32le(std::ostream& os, std::span<const float> values)
{
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(float)));
    } else {
        for (float v : values) {
            auto bits = std::bit_cast<std::uint32_t>(v);
            unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                  static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
            os.write(reinterpret_cast<const char*>(b), 4);
        }
    }
}

inline std::vector<float> decode_f32le(const std::string& bytes)
{
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto* b = reinterpret_cast<const unsigned char*>(bytes.data() + 4 * i);
        const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                   (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline nlohmann::json read_json(const std::filesystem::path& path)
{
    try {
        return nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

} // namespace io

inline void save_volume(const Volume& volume, const std::filesystem::path& header_path)
{
    volume.validate();
    nlohmann::json header = {
        {"version", io::kVolumeVersion},
        {"width", volume.width()},
        {"height", volume.height()},
        {"depth", volume.depth()},
        {"dtype", "f32le"},
        {"order", "slice-major,row-major"},
        {"value_range", {volume.value_range.first, volume.value_range.second}},
    };
    io::write_text(header_path, header.dump(2) + "\n");
    std::ofstream os(io::companion(header_path, ".raw"), std::ios::binary);
    if (!os) throw std::runtime_error("cannot write volume payload for " + header_path.string());
    for (const auto& s : volume.slices) io::write_f32le(os, s.data);
}

inline Volume load_volume(const std::filesystem::path& header_path)
{
    const auto header = io::read_json(header_path);
    try {
        if (header.at("version").get<int>() != io::kVolumeVersion) throw FormatError("unsupported version");
        if (header.at("dtype").get<std::string>() != "f32le")
            throw FormatError("unsupported dtype " + header.at("dtype").get<std::string>());
        if (header.at("order").get<std::string>() != "slice-major,row-major")
            throw FormatError("unsupported sample order");
        const int w = header.at("width").get<int>();
        const int h = header.at("height").get<int>();
        const int d = header.at("depth").get<int>();
        if (w <= 0 || h <= 0 || d < 2) throw FormatError("corrupt volume file: bad dimensions");
        const auto bytes = io::read_file(io::companion(header_path, ".raw"));
        const std::size_t per_slice = static_cast<std::size_t>(w) * h;
        if (bytes.size() != per_slice * d * sizeof(float))
            throw FormatError("corrupt volume file: payload holds " + std::to_string(bytes.size()) +
                              " bytes, header declares " + std::to_string(per_slice * d * sizeof(float)));
        const auto samples = io::decode_f32le(bytes);
        std::vector<Slice> slices;
        slices.reserve(d);
        for (int z = 0; z < d; ++z)
            slices.emplace_back(w, h, std::vector<float>(samples.begin() + z * per_slice,
                                                         samples.begin() + (z + 1) * per_slice));
        const auto& vr = header.at("value_range");
        return Volume(std::move(slices), {vr.at(0).get<float>(), vr.at(1).get<float>()});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt volume file: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// 16-bit grayscale PNG export for visual inspection.

namespace detail {

inline void png_chunk(std::string& out, const char* type, const std::string& payload)
{
    auto put32 = [&](std::uint32_t v) {
        for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
    };
    put32(static_cast<std::uint32_t>(payload.size()));
    const std::size_t start = out.size();
    out.append(type, 4);
    out += payload;
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(out.data() + start),
                           static_cast<uInt>(out.size() - start));
    put32(static_cast<std::uint32_t>(crc));
}

} // namespace detail

/// Encodes a slice as a 16-bit grayscale PNG; values are clamped to [0, 1]
/// and scaled by 65535.
inline std::string encode_png16(const Slice& slice)
{
    std::string raw;
    raw.reserve(static_cast<std::size_t>(slice.height) * (1 + 2 * slice.width));
    for (int y = 0; y < slice.height; ++y) {
        raw.push_back(0); // filter: none
        for (int x = 0; x < slice.width; ++x) {
            const float v = std::isfinite(slice(x, y)) ? std::clamp(slice(x, y), 0.0f, 1.0f) : 0.0f;
            const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0f));
            raw.push_back(static_cast<char>(q >> 8));
            raw.push_back(static_cast<char>(q & 0xff));
        }
    }
    uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
    std::string packed(packed_size, '\0');
    if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_size, reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK)
        throw std::runtime_error("png compression failed");
    packed.resize(packed_size);

    std::string ihdr;
    for (std::uint32_t v : {static_cast<std::uint32_t>(slice.width), static_cast<std::uint32_t>(slice.height)})
        for (int s = 24; s >= 0; s -= 8) ihdr.push_back(static_cast<char>((v >> s) & 0xff));
    ihdr += std::string{'\x10', '\x00', '\x00', '\x00', '\x00'}; // depth 16, grayscale

    std::string out = "\x89PNG\r\n\x1a\n";
    detail::png_chunk(out, "IHDR", ihdr);
    detail::png_chunk(out, "IDAT", packed);
    detail::png_chunk(out, "IEND", "");
    return out;
}

inline void save_png16(const Slice& slice, const std::filesystem::path& path)
{
    io::write_text(path, encode_png16(slice));
}

} // namespace nsn2n
