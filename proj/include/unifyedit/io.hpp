#pragma once

#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "unifyedit/errors.hpp"
#include "unifyedit/latent.hpp"

namespace unifyedit {

// On-disk array container: 6-byte magic, one dtype byte (1 = float64), one
// rank byte, rank little-endian uint32 extents, then the payload as
// little-endian float64 in C order. Only little-endian hosts are supported.
struct RawArray {
    std::vector<int> dims;
    std::vector<double> data;

    Eigen::Index element_count() const {
        Eigen::Index n = 1;
        for (int d : dims) n *= d;
        return n;
    }
};

namespace detail {

inline constexpr char kArrayMagic[6] = {'U', 'E', 'A', 'R', 'R', '1'};
inline constexpr std::uint8_t kDtypeFloat64 = 1;

}  // namespace detail

inline void write_array(const std::string& path, const RawArray& array) {
    detail::require(!array.dims.empty() && array.dims.size() <= 8,
                    "write_array: rank must be in [1, 8]");
    for (int d : array.dims) detail::require(d > 0, "write_array: extents must be positive");
    detail::require(static_cast<Eigen::Index>(array.data.size()) == array.element_count(),
                    "write_array: data size does not match extents");

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("write_array: cannot open " + path);
    out.write(detail::kArrayMagic, sizeof(detail::kArrayMagic));
    std::uint8_t dtype = detail::kDtypeFloat64;
    std::uint8_t rank = static_cast<std::uint8_t>(array.dims.size());
    out.write(reinterpret_cast<const char*>(&dtype), 1);
    out.write(reinterpret_cast<const char*>(&rank), 1);
    for (int d : array.dims) {
        std::uint32_t extent = static_cast<std::uint32_t>(d);
        out.write(reinterpret_cast<const char*>(&extent), sizeof(extent));
    }
    out.write(reinterpret_cast<const char*>(array.data.data()),
              static_cast<std::streamsize>(array.data.size() * sizeof(double)));
    if (!out) throw io_error("write_array: short write to " + path);
}

inline RawArray read_array(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("read_array: cannot open " + path);
    char magic[sizeof(detail::kArrayMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, detail::kArrayMagic, sizeof(magic)) != 0) {
        throw parse_error("read_array: bad magic in " + path);
    }
    std::uint8_t dtype = 0, rank = 0;
    in.read(reinterpret_cast<char*>(&dtype), 1);
    in.read(reinterpret_cast<char*>(&rank), 1);
    if (!in || dtype != detail::kDtypeFloat64) {
        throw parse_error("read_array: unsupported dtype in " + path);
    }
    if (rank < 1 || rank > 8) throw parse_error("read_array: bad rank in " + path);

    RawArray array;
    array.dims.resize(rank);
    for (int i = 0; i < rank; ++i) {
        std::uint32_t extent = 0;
        in.read(reinterpret_cast<char*>(&extent), sizeof(extent));
        if (!in || extent == 0) throw parse_error("read_array: bad extent in " + path);
        array.dims[static_cast<std::size_t>(i)] = static_cast<int>(extent);
    }
    array.data.resize(static_cast<std::size_t>(array.element_count()));
    in.read(reinterpret_cast<char*>(array.data.data()),
            static_cast<std::streamsize>(array.data.size() * sizeof(double)));
    if (!in) throw parse_error("read_array: truncated payload in " + path);
    return array;
}

inline void write_latent(const std::string& path, const LatentGrid& grid) {
    grid.validate();
    RawArray array;
    array.dims = {grid.channels, grid.height, grid.width};
    array.data.assign(grid.values.data(), grid.values.data() + grid.values.size());
    write_array(path, array);
}

// The array header carries only dtype and shape, so the caller supplies the
// timestep tag for the loaded latent.
inline LatentGrid read_latent(const std::string& path, int timestep = 0) {
    RawArray array = read_array(path);
    if (array.dims.size() != 3) {
        throw shape_error("read_latent: expected rank-3 array in " + path);
    }
    LatentGrid grid;
    grid.channels = array.dims[0];
    grid.height = array.dims[1];
    grid.width = array.dims[2];
    grid.timestep = timestep;
    grid.values = Eigen::Map<const Eigen::VectorXd>(array.data.data(),
                                                    static_cast<Eigen::Index>(array.data.size()));
    grid.validate();
    return grid;
}

// Schedule files hold one alpha value per line, index 0 first. Blank lines
// are ignored.
inline AlphaSchedule read_schedule(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("read_schedule: cannot open " + path);
    AlphaSchedule schedule;
    std::string line;
    int line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        std::size_t begin = line.find_first_not_of(" \t\r");
        if (begin == std::string::npos) continue;
        std::size_t end = line.find_last_not_of(" \t\r");
        std::string token = line.substr(begin, end - begin + 1);
        try {
            std::size_t used = 0;
            double value = std::stod(token, &used);
            if (used != token.size()) throw std::invalid_argument(token);
            schedule.alphas.push_back(value);
        } catch (const std::exception&) {
            throw parse_error("read_schedule: " + path + ":" + std::to_string(line_number) +
                              ": not a real number: '" + token + "'");
        }
    }
    try {
        schedule.validate();
    } catch (const validation_error& e) {
        throw parse_error("read_schedule: " + path + ": " + e.what());
    }
    return schedule;
}

inline void write_schedule(const std::string& path, const AlphaSchedule& schedule) {
    schedule.validate();
    std::ofstream out(path);
    if (!out) throw io_error("write_schedule: cannot open " + path);
    out.precision(17);
    for (double a : schedule.alphas) out << a << "\n";
    if (!out) throw io_error("write_schedule: short write to " + path);
}

// Grayscale PGM image, binary (P5) or ASCII (P2), maxval up to 255.
struct PgmImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};

namespace detail {

inline int next_pgm_token(std::istream& in, const std::string& path) {
    // Skips whitespace and '#' comment lines, then reads one integer.
    for (;;) {
        int c = in.peek();
        if (c == EOF) throw parse_error("read_pgm: truncated header in " + path);
        if (c == '#') {
            std::string comment;
            std::getline(in, comment);
            continue;
        }
        if (std::isspace(c)) {
            in.get();
            continue;
        }
        break;
    }
    int value = 0;
    if (!(in >> value)) throw parse_error("read_pgm: bad header integer in " + path);
    return value;
}

}  // namespace detail

inline PgmImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("read_pgm: cannot open " + path);
    char p = 0, kind = 0;
    in.get(p);
    in.get(kind);
    if (p != 'P' || (kind != '2' && kind != '5')) {
        throw parse_error("read_pgm: not a P2/P5 file: " + path);
    }
    PgmImage image;
    image.width = detail::next_pgm_token(in, path);
    image.height = detail::next_pgm_token(in, path);
    int maxval = detail::next_pgm_token(in, path);
    if (image.width <= 0 || image.height <= 0 || maxval <= 0 || maxval > 255) {
        throw parse_error("read_pgm: unsupported dimensions or maxval in " + path);
    }
    std::size_t count = static_cast<std::size_t>(image.width) * image.height;
    image.pixels.resize(count);
    if (kind == '5') {
        in.get();  // single whitespace after maxval
        in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(count));
        if (!in) throw parse_error("read_pgm: truncated pixels in " + path);
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            int value = 0;
            if (!(in >> value) || value < 0 || value > maxval) {
                throw parse_error("read_pgm: bad pixel in " + path);
            }
            image.pixels[i] = static_cast<std::uint8_t>(value);
        }
    }
    return image;
}

inline void write_pgm(const std::string& path, const PgmImage& image) {
    detail::require(image.width > 0 && image.height > 0, "write_pgm: empty image");
    detail::require(image.pixels.size() ==
                        static_cast<std::size_t>(image.width) * image.height,
                    "write_pgm: pixel count does not match dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("write_pgm: cannot open " + path);
    out << "P5\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw io_error("write_pgm: short write to " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("read_text_file: cannot open " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("write_text_file: cannot open " + path);
    out << content;
    if (!out) throw io_error("write_text_file: short write to " + path);
}

}  // namespace unifyedit
