#include "scenescore/pmte.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "scenescore/common.hpp"

namespace scenescore {

namespace {

void put_u32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

class Reader {
public:
    Reader(const std::string& bytes, const std::string& path)
        : bytes_(bytes), path_(path) {}

    uint32_t u32() {
        if (pos_ + 4 > bytes_.size())
            throw DataError("truncated PMTE file: " + path_);
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i)
            v = (v << 8) | static_cast<unsigned char>(bytes_[pos_ + i]);
        pos_ += 4;
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

void write_pmte(const std::string& path, const std::vector<Tensor>& tensors) {
    std::string out;
    out += "PMTE";
    put_u32(out, 1u);
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const Tensor& t : tensors) {
        if (t.data.size() != t.element_count())
            throw DataError("PMTE tensor data size does not match its shape");
        put_u32(out, static_cast<uint32_t>(t.shape.size()));
        for (uint32_t d : t.shape) put_u32(out, d);
        for (float f : t.data) put_u32(out, std::bit_cast<uint32_t>(f));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("write failed: " + path);
}

std::vector<Tensor> read_pmte(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open PMTE file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)),
                      std::istreambuf_iterator<char>());
    if (bytes.size() < 4 || bytes.compare(0, 4, "PMTE") != 0)
        throw DataError("bad PMTE magic: " + path);
    Reader r(bytes.substr(4), path);
    uint32_t version = r.u32();
    if (version != 1)
        throw DataError("unsupported PMTE version " + std::to_string(version) +
                        ": " + path);
    uint32_t count = r.u32();
    std::vector<Tensor> tensors;
    tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Tensor t;
        uint32_t rank = r.u32();
        t.shape.resize(rank);
        for (uint32_t d = 0; d < rank; ++d) t.shape[d] = r.u32();
        std::size_t n = t.element_count();
        t.data.resize(n);
        for (std::size_t j = 0; j < n; ++j) t.data[j] = r.f32();
        tensors.push_back(std::move(t));
    }
    if (!r.done()) throw DataError("trailing bytes in PMTE file: " + path);
    return tensors;
}

Tensor tensor_from_mat(const Mat& m) {
    Tensor t;
    t.shape = {static_cast<uint32_t>(m.rows()), static_cast<uint32_t>(m.cols())};
    t.data.reserve(m.rows() * m.cols());
    for (double v : m.data()) t.data.push_back(static_cast<float>(v));
    return t;
}

Tensor tensor_from_vec(const Vec& v) {
    Tensor t;
    t.shape = {static_cast<uint32_t>(v.size())};
    t.data.reserve(v.size());
    for (double x : v) t.data.push_back(static_cast<float>(x));
    return t;
}

Mat mat_from_tensor(const Tensor& t) {
    if (t.shape.size() != 2) throw DataError("expected rank-2 PMTE tensor");
    Mat m(t.shape[0], t.shape[1]);
    for (std::size_t i = 0; i < t.data.size(); ++i)
        m.data()[i] = static_cast<double>(t.data[i]);
    return m;
}

Vec vec_from_tensor(const Tensor& t) {
    if (t.shape.size() != 1) throw DataError("expected rank-1 PMTE tensor");
    Vec v(t.data.begin(), t.data.end());
    return v;
}

}  // namespace scenescore
