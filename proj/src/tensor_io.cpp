#include "evlign/tensor_io.hpp"

#include <fstream>
#include <limits>

#include "binary_io.hpp"

namespace evlign {

std::uint64_t Tensor::element_count() const {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void Tensor::validate() const {
  if (shape.empty() || shape.size() > 255) throw ShapeError("tensor rank must be in [1, 255]");
  if (element_count() != data.size()) {
    throw ShapeError("tensor payload has " + std::to_string(data.size()) +
                     " values, shape needs " + std::to_string(element_count()));
  }
}

void write_tensor(std::ostream& out, const Tensor& t) {
  t.validate();
  out.write("TNS1", 4);
  detail::put_le(out, static_cast<std::uint8_t>(t.shape.size()));
  for (auto d : t.shape) detail::put_le(out, d);
  for (float v : t.data) detail::put_f32(out, v);
  if (!out) throw Error("tensor write failed");
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor read_tensor(std::istream& in) {
  detail::expect_magic(in, "TNS1");
  Tensor t;
  const auto rank = detail::get_le<std::uint8_t>(in, "rank");
  if (rank == 0) throw ParseError("tensor rank 0 at offset 4");
  t.shape.resize(rank);
  for (auto& d : t.shape) d = detail::get_le<std::uint64_t>(in, "dim");
  const auto n = t.element_count();
  if (n > std::numeric_limits<std::uint32_t>::max()) throw ParseError("tensor too large");
  t.data.resize(n);
  for (auto& v : t.data) v = detail::get_f32(in, "payload");
  return t;
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return read_tensor(in);
}

Tensor to_tensor(const Matrix& m) {
  Tensor t;
  t.shape = {m.rows(), m.cols()};
  t.data.reserve(m.size());
  for (double v : m.data()) t.data.push_back(static_cast<float>(v));
  return t;
}

Matrix to_matrix(const Tensor& t) {
  t.validate();
  if (t.shape.size() != 2) throw ShapeError("expected a rank-2 tensor");
  Matrix m(t.shape[0], t.shape[1]);
  for (std::size_t i = 0; i < t.data.size(); ++i) m.data()[i] = t.data[i];
  return m;
}

}  // namespace evlign
