#ifndef MPK_TENSOR_FILE_HPP
#define MPK_TENSOR_FILE_HPP

// Self-describing tensor container shared by checkpoints, patch files,
// whitening transforms and synthetic datasets.
//
//   "MPK1"
//   u32 version, u32 tensor count
//   per tensor: u16 name length, UTF-8 name, u8 rank, rank x u64 dims,
//               f64 data (row-major, product of dims elements; 1 for rank 0)
//   u32 CRC32 of every byte after the magic
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <zlib.h>

#include "error.hpp"

namespace mpk {

inline constexpr std::string_view tensor_file_magic = "MPK1";
inline constexpr std::uint32_t tensor_file_version = 1;

struct NamedTensor {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<double> data;

    std::size_t rank() const noexcept { return dims.size(); }

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

class TensorFile {
public:
    const std::vector<NamedTensor>& tensors() const noexcept { return tensors_; }

    bool contains(std::string_view name) const noexcept { return find(name) != nullptr; }

    const NamedTensor* find(std::string_view name) const noexcept {
        for (const auto& t : tensors_) {
            if (t.name == name) {
                return &t;
            }
        }
        return nullptr;
    }

    const NamedTensor& at(std::string_view name) const {
        if (const auto* t = find(name)) {
            return *t;
        }
        throw format_error("missing tensor '" + std::string(name) + "'");
    }

    void add(NamedTensor t) {
        if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) {
            throw argument_error("tensor name too long");
        }
        if (t.dims.size() > std::numeric_limits<std::uint8_t>::max()) {
            throw argument_error("tensor rank too large");
        }
        if (element_count(t.dims) != t.data.size()) {
            throw shape_error("tensor '" + t.name + "' data length does not match dims");
        }
        if (contains(t.name)) {
            throw argument_error("duplicate tensor '" + t.name + "'");
        }
        tensors_.push_back(std::move(t));
    }

    void add_scalar(std::string name, double value) { add({std::move(name), {}, {value}}); }

    template <typename Derived>
    void add_matrix(std::string name, const Eigen::MatrixBase<Derived>& m) {
        add({std::move(name), {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
             row_major(m)});
    }

    template <typename Derived>
    void add_vector(std::string name, const Eigen::MatrixBase<Derived>& v) {
        add({std::move(name), {static_cast<std::uint64_t>(v.size())}, row_major(v)});
    }

    /// Stores a matrix under an explicit higher-rank shape (e.g. D x F x L).
    template <typename Derived>
    void add_reshaped(std::string name, std::vector<std::uint64_t> dims, const Eigen::MatrixBase<Derived>& m) {
        add({std::move(name), std::move(dims), row_major(m)});
    }

    double scalar(std::string_view name) const {
        const auto& t = at(name);
        if (t.rank() != 0) {
            throw shape_error("tensor '" + t.name + "' is not a scalar");
        }
        return t.data[0];
    }

    /// Reads a rank-2 tensor, or any tensor whose dims fold into (rows, cols).
    Eigen::MatrixXd matrix(std::string_view name) const {
        const auto& t = at(name);
        if (t.rank() != 2) {
            throw shape_error("tensor '" + t.name + "' is not rank 2");
        }
        return from_row_major(t.data, t.dims[0], t.dims[1]);
    }

    Eigen::MatrixXd folded(std::string_view name, std::uint64_t rows, std::uint64_t cols) const {
        const auto& t = at(name);
        // Some leading group of dims must multiply to `rows`.
        bool split = false;
        std::uint64_t lead = 1;
        for (auto d : t.dims) {
            lead *= d;
            split = split || lead == rows;
        }
        if (element_count(t.dims) != rows * cols || !split) {
            throw shape_error("tensor '" + t.name + "' cannot be viewed as " + std::to_string(rows) + "x" +
                              std::to_string(cols));
        }
        return from_row_major(t.data, rows, cols);
    }

    Eigen::VectorXd vector(std::string_view name) const {
        const auto& t = at(name);
        if (t.rank() != 1) {
            throw shape_error("tensor '" + t.name + "' is not rank 1");
        }
        return Eigen::Map<const Eigen::VectorXd>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
    }

    std::vector<std::uint8_t> encode() const {
        std::vector<std::uint8_t> out(tensor_file_magic.begin(), tensor_file_magic.end());
        put_u32(out, tensor_file_version);
        put_u32(out, static_cast<std::uint32_t>(tensors_.size()));
        for (const auto& t : tensors_) {
            put_uint(out, t.name.size(), 2);
            out.insert(out.end(), t.name.begin(), t.name.end());
            out.push_back(static_cast<std::uint8_t>(t.rank()));
            for (auto d : t.dims) {
                put_uint(out, d, 8);
            }
            for (double x : t.data) {
                put_uint(out, std::bit_cast<std::uint64_t>(x), 8);
            }
        }
        put_u32(out, crc(out.data() + 4, out.size() - 4));
        return out;
    }

    static TensorFile decode(const std::vector<std::uint8_t>& bytes) {
        if (bytes.size() < 4 + 8 + 4 ||
            std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != tensor_file_magic) {
            throw format_error("bad magic or truncated header");
        }
        const std::size_t body_end = bytes.size() - 4;
        Reader stored{bytes, body_end};
        if (stored.u32() != crc(bytes.data() + 4, body_end - 4)) {
            throw format_error("CRC mismatch");
        }

        Reader r{bytes, 4, body_end};
        const std::uint32_t version = r.u32();
        if (version != tensor_file_version) {
            throw format_error("unsupported version " + std::to_string(version));
        }
        const std::uint32_t count = r.u32();
        TensorFile file;
        for (std::uint32_t k = 0; k < count; ++k) {
            NamedTensor t;
            const auto name_len = static_cast<std::size_t>(r.uint(2));
            t.name = r.string(name_len);
            const std::size_t rank = static_cast<std::size_t>(r.uint(1));
            for (std::size_t d = 0; d < rank; ++d) {
                t.dims.push_back(r.uint(8));
            }
            const std::uint64_t n = element_count(t.dims);
            if (n > (body_end - r.pos) / 8) {
                throw format_error("tensor '" + t.name + "' extends past end of file");
            }
            t.data.resize(static_cast<std::size_t>(n));
            for (auto& x : t.data) {
                x = std::bit_cast<double>(r.uint(8));
            }
            if (file.contains(t.name)) {
                throw format_error("duplicate tensor '" + t.name + "'");
            }
            file.tensors_.push_back(std::move(t));
        }
        if (r.pos != body_end) {
            throw format_error("trailing bytes after last tensor");
        }
        return file;
    }

    /// Writes via a temporary file and rename so readers never see a partial file.
    void save(const std::filesystem::path& path) const {
        const auto bytes = encode();
        auto tmp = path;
        tmp += ".tmp";
        {
            std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
            if (!os) {
                throw error("cannot open '" + tmp.string() + "' for writing");
            }
            os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
            if (!os) {
                throw error("write failed for '" + tmp.string() + "'");
            }
        }
        std::filesystem::rename(tmp, path);
    }

    static TensorFile load(const std::filesystem::path& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) {
            throw error("cannot open '" + path.string() + "'");
        }
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        return decode(bytes);
    }

    static std::uint64_t element_count(const std::vector<std::uint64_t>& dims) {
        std::uint64_t n = 1;
        for (auto d : dims) {
            if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) {
                throw format_error("tensor dims overflow");
            }
            n *= d;
        }
        return n;
    }

private:
    struct Reader {
        const std::vector<std::uint8_t>& bytes;
        std::size_t pos;
        std::size_t end = bytes.size();

        std::uint64_t uint(int width) {
            if (end - pos < static_cast<std::size_t>(width)) {
                throw format_error("unexpected end of data");
            }
            std::uint64_t v = 0;
            for (int b = 0; b < width; ++b) {
                v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * b);
            }
            return v;
        }
        std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
        std::string string(std::size_t n) {
            if (end - pos < n) {
                throw format_error("unexpected end of data");
            }
            std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
            pos += n;
            return s;
        }
    };

    static void put_uint(std::vector<std::uint8_t>& out, std::uint64_t v, int width) {
        for (int b = 0; b < width; ++b) {
            out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
        }
    }
    static void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) { put_uint(out, v, 4); }

    static std::uint32_t crc(const std::uint8_t* data, std::size_t n) {
        uLong c = crc32(0L, Z_NULL, 0);
        while (n > 0) {
            const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
            c = crc32(c, data, chunk);
            data += chunk;
            n -= chunk;
        }
        return static_cast<std::uint32_t>(c);
    }

    template <typename Derived>
    static std::vector<double> row_major(const Eigen::MatrixBase<Derived>& m) {
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(m.size()));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                out.push_back(static_cast<double>(m(r, c)));
            }
        }
        return out;
    }

    static Eigen::MatrixXd from_row_major(const std::vector<double>& data, std::uint64_t rows, std::uint64_t cols) {
        using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        return Eigen::Map<const RowMajor>(data.data(), static_cast<Eigen::Index>(rows),
                                          static_cast<Eigen::Index>(cols));
    }

    std::vector<NamedTensor> tensors_;
};

} // namespace mpk

#endif
