#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scenescore/mat.hpp"

namespace scenescore {

/// PMTE tensor container.
///
/// Layout, all little-endian:
///   bytes 0-3   magic "PMTE"
///   u32         version (1)
///   u32         tensor count
///   per tensor: u32 rank, u32 dims[rank], f32 data (row-major)
struct Tensor {
    std::vector<uint32_t> shape;
    std::vector<float> data;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (uint32_t d : shape) n *= d;
        return n;
    }
};

void write_pmte(const std::string& path, const std::vector<Tensor>& tensors);

/// Reads a full container. Throws DataError on bad magic, unsupported
/// version, or truncation; never returns a partial result.
std::vector<Tensor> read_pmte(const std::string& path);

Tensor tensor_from_mat(const Mat& m);
Tensor tensor_from_vec(const Vec& v);
Mat mat_from_tensor(const Tensor& t);      // requires rank 2
Vec vec_from_tensor(const Tensor& t);      // requires rank 1

}  // namespace scenescore
