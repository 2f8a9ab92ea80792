#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "evlign/matrix.hpp"

namespace evlign {

/// N-d float32 tensor as stored on disk: magic `TNS1`, u8 rank, rank x u64
/// dims, then the row-major f32 payload, all little-endian.
struct Tensor {
  std::vector<std::uint64_t> shape;
  std::vector<float> data;

  std::uint64_t element_count() const;
  /// Throws ShapeError when data.size() disagrees with shape.
  void validate() const;
};

void write_tensor(std::ostream& out, const Tensor& t);
void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(std::istream& in);
Tensor read_tensor(const std::filesystem::path& path);

/// Rank-2 conversions. Doubles are narrowed to f32 on the way out.
Tensor to_tensor(const Matrix& m);
Matrix to_matrix(const Tensor& t);

}  // namespace evlign
