#include "refdrop/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace refdrop::io {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "raw output assumes a little-endian host");

namespace {

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
Matrix<T> decode_raw(const std::string& bytes, std::size_t rows, std::size_t cols,
                     const std::filesystem::path& path) {
  if (bytes.size() != rows * cols * sizeof(T)) {
    throw IoError("'" + path.string() + "' holds " + std::to_string(bytes.size()) +
                  " bytes, sidecar shape needs " + std::to_string(rows * cols * sizeof(T)));
  }
  std::vector<T> data(rows * cols);
  std::memcpy(data.data(), bytes.data(), bytes.size());
  return Matrix<T>(rows, cols, std::move(data));
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& raw) {
  return std::filesystem::path(raw.string() + ".json");
}

void write_text(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

template <typename T>
void write_raw(const std::filesystem::path& path, const Matrix<T>& m) {
  std::string bytes(m.size() * sizeof(T), '\0');
  std::memcpy(bytes.data(), m.values().data(), bytes.size());
  write_text(path, bytes);
  const json sidecar = {{"dtype", dtype_name<T>()},
                        {"shape", {m.rows(), m.cols()}},
                        {"byte_order", "little"}};
  write_text(sidecar_path(path), sidecar.dump() + "\n");
}

std::variant<Matrix<float>, Matrix<double>> read_raw(const std::filesystem::path& path) {
  json sidecar;
  try {
    sidecar = json::parse(read_file(sidecar_path(path)));
  } catch (const json::parse_error& e) {
    throw IoError("malformed sidecar for '" + path.string() + "': " + e.what());
  }
  try {
    const auto dtype = sidecar.at("dtype").get<std::string>();
    const auto shape = sidecar.at("shape").get<std::vector<std::size_t>>();
    if (sidecar.at("byte_order").get<std::string>() != "little" || shape.size() != 2) {
      throw IoError("unsupported sidecar for '" + path.string() + "'");
    }
    const std::string bytes = read_file(path);
    if (dtype == "f32") return decode_raw<float>(bytes, shape[0], shape[1], path);
    if (dtype == "f64") return decode_raw<double>(bytes, shape[0], shape[1], path);
    throw IoError("unsupported dtype '" + dtype + "' in sidecar for '" + path.string() + "'");
  } catch (const json::exception& e) {
    throw IoError("malformed sidecar for '" + path.string() + "': " + e.what());
  }
}

template <typename T>
std::string encode_pgm(const Matrix<T>& m) {
  const auto v = m.values();
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double range = static_cast<double>(*hi_it) - lo;
  std::string out = "P5\n" + std::to_string(m.cols()) + " " + std::to_string(m.rows()) + "\n255\n";
  out.reserve(out.size() + v.size());
  for (T x : v) {
    const double scaled = range > 0.0 ? (static_cast<double>(x) - lo) / range * 255.0 : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(scaled))));
  }
  return out;
}

std::string format_real(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::string encode_sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "c,step,sample,distance\n";
  for (const auto& r : rows) {
    out += format_real(r.coefficient);
    out += ',';
    out += std::to_string(r.step);
    out += ',';
    out += std::to_string(r.sample);
    out += ',';
    out += format_real(r.distance);
    out += '\n';
  }
  return out;
}

json to_json(const oracle::EquivalenceReport& r) {
  auto cell_json = [](const oracle::GridCell& c) {
    return json{{"L", c.seq_len}, {"d", c.key_dim}, {"d_v", c.value_dim}};
  };
  json grid = json::array();
  for (const auto& c : r.grid) grid.push_back(cell_json(c));
  json identities = json::array();
  for (const auto& id : r.identities) {
    identities.push_back({{"name", id.name},
                          {"max_rel_error", id.max_rel_error},
                          {"max_abs_error", id.max_abs_error},
                          {"worst_seed", id.worst_seed},
                          {"worst_cell", cell_json(id.worst_cell)}});
  }
  return {{"suite", r.suite},
          {"precision", r.precision},
          {"seed", r.seed},
          {"trials", r.trials},
          {"grid", grid},
          {"threshold", r.threshold},
          {"max_rel_error", r.max_rel_error},
          {"max_abs_error", r.max_abs_error},
          {"worst_seed", r.worst_seed},
          {"worst_cell", cell_json(r.worst_cell)},
          {"coefficient_out_of_range", r.coefficient_out_of_range},
          {"coefficient_margin", r.coefficient_margin},
          {"identities", identities},
          {"pass", r.pass}};
}

template void write_raw(const std::filesystem::path&, const Matrix<float>&);
template void write_raw(const std::filesystem::path&, const Matrix<double>&);
template std::string encode_pgm(const Matrix<float>&);
template std::string encode_pgm(const Matrix<double>&);

}  // namespace refdrop::io
