#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "refdrop/matrix.hpp"
#include "refdrop/oracle.hpp"

namespace refdrop::io {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raw little-endian samples plus a JSON sidecar at `<path>.json`:
///   {"dtype":"f32","shape":[H,W],"byte_order":"little"}
template <typename T>
void write_raw(const std::filesystem::path& path, const Matrix<T>& m);

/// Reloads a raw file using its sidecar; the dtype decides the alternative.
std::variant<Matrix<float>, Matrix<double>> read_raw(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& raw);

/// Binary PGM (P5), maxval 255. Entries are mapped linearly from [min, max] of
/// the image to [0, 255] with rounding; a constant image maps to 0.
template <typename T>
std::string encode_pgm(const Matrix<T>& m);

void write_text(const std::filesystem::path& path, const std::string& contents);

/// Shortest round-trip decimal form, '.' separator regardless of locale.
std::string format_real(double value);

struct SweepRow {
  double coefficient;
  std::size_t step;
  std::size_t sample;
  double distance;
};

/// Header `c,step,sample,distance`, '\n' line endings.
std::string encode_sweep_csv(const std::vector<SweepRow>& rows);

nlohmann::json to_json(const oracle::EquivalenceReport& report);

}  // namespace refdrop::io
