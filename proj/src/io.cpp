// Copyright 2026 The monetseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "monetseg/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>

#include "monetseg/error.hpp"

namespace monetseg {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian hosts are not supported");

namespace {

template <class T>
T byteswap_if_needed(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <class T>
void put_le(std::string& out, T v) {
  v = byteswap_if_needed(v);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T get_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return byteswap_if_needed(v);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

[[noreturn]] void parse_fail(int line, const std::string& msg) {
  throw Error(ErrorKind::kParse, "nrrd line " + std::to_string(line) + ": " + msg);
}

std::vector<double> parse_numbers(std::string_view s, int line) {
  std::vector<double> out;
  std::string tmp(s);
  for (char& c : tmp) {
    if (c == '(' || c == ')' || c == ',') c = ' ';
  }
  std::istringstream is(tmp);
  std::string tok;
  while (is >> tok) {
    double v = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
      parse_fail(line, "expected number, got '" + tok + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::optional<ScalarType> parse_type(std::string_view s) {
  static const std::pair<const char*, ScalarType> kNames[] = {
      {"float", ScalarType::kFloat32},
      {"float32", ScalarType::kFloat32},
      {"short", ScalarType::kInt16},
      {"short int", ScalarType::kInt16},
      {"signed short", ScalarType::kInt16},
      {"signed short int", ScalarType::kInt16},
      {"int16", ScalarType::kInt16},
      {"int16_t", ScalarType::kInt16},
      {"uchar", ScalarType::kUInt8},
      {"unsigned char", ScalarType::kUInt8},
      {"uint8", ScalarType::kUInt8},
      {"uint8_t", ScalarType::kUInt8},
  };
  for (const auto& [name, t] : kNames) {
    if (s == name) return t;
  }
  return std::nullopt;
}

bool ignored_field(std::string_view key) {
  static const char* kIgnored[] = {"content", "space",   "space origin", "kinds",
                                   "centers", "centerings", "units", "space units",
                                   "labels",  "measurement frame"};
  return std::any_of(std::begin(kIgnored), std::end(kIgnored),
                     [&](const char* k) { return key == k; });
}

std::string header_text(ScalarType type, const Dims& d, const Spacing& s) {
  std::ostringstream os;
  os.precision(17);
  os << "NRRD0004\n"
     << "type: " << nrrd_type_name(type) << "\n"
     << "dimension: 3\n"
     << "sizes: " << d.nx << " " << d.ny << " " << d.nz << "\n"
     << "spacings: " << s.sx << " " << s.sy << " " << s.sz << "\n"
     << "encoding: raw\n";
  if (scalar_size(type) > 1) os << "endian: little\n";
  os << "\n";
  return os.str();
}

}  // namespace

std::size_t scalar_size(ScalarType t) {
  switch (t) {
    case ScalarType::kFloat32: return 4;
    case ScalarType::kInt16: return 2;
    case ScalarType::kUInt8: return 1;
  }
  return 0;
}

const char* nrrd_type_name(ScalarType t) {
  switch (t) {
    case ScalarType::kFloat32: return "float";
    case ScalarType::kInt16: return "int16";
    case ScalarType::kUInt8: return "uint8";
  }
  return "?";
}

NrrdImage parse_nrrd(std::string_view bytes) {
  NrrdImage img;
  std::optional<ScalarType> type;
  std::optional<int> dimension;
  std::optional<std::vector<double>> sizes;
  std::optional<std::string> encoding;
  std::optional<std::string> endian;
  std::optional<Spacing> spacing;

  std::size_t pos = 0;
  int line_no = 0;
  bool terminated = false;
  while (pos < bytes.size()) {
    const std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string_view::npos) break;
    ++line_no;
    const std::string_view raw = bytes.substr(pos, eol - pos);
    pos = eol + 1;
    const std::string_view line = trim(raw);
    if (line.empty()) {
      terminated = true;
      break;
    }
    if (line_no == 1 && line.starts_with("NRRD")) {
      if (line.size() != 8 || line < "NRRD0001" || line > "NRRD0005") {
        parse_fail(line_no, "unsupported magic '" + std::string(line) + "'");
      }
      continue;
    }
    if (line.front() == '#') continue;
    if (line.find(":=") != std::string_view::npos) continue;  // key/value comment
    const std::size_t colon = line.find(": ");
    if (colon == std::string_view::npos) parse_fail(line_no, "expected 'key: value'");
    const std::string key(trim(line.substr(0, colon)));
    const std::string_view value = trim(line.substr(colon + 2));

    if (key == "type") {
      type = parse_type(value);
      if (!type) parse_fail(line_no, "unsupported type '" + std::string(value) + "'");
    } else if (key == "dimension") {
      const auto v = parse_numbers(value, line_no);
      if (v.size() != 1) parse_fail(line_no, "dimension takes one value");
      dimension = static_cast<int>(v[0]);
      if (*dimension != 3) parse_fail(line_no, "only 3-D images are supported");
    } else if (key == "sizes") {
      sizes = parse_numbers(value, line_no);
      if (sizes->size() != 3) parse_fail(line_no, "sizes needs 3 values");
      for (double s : *sizes) {
        if (s < 1 || s != std::floor(s) || s > 1 << 20) {
          parse_fail(line_no, "invalid size");
        }
      }
    } else if (key == "encoding") {
      encoding = std::string(value);
      if (*encoding != "raw") parse_fail(line_no, "only raw encoding is supported");
    } else if (key == "endian") {
      endian = std::string(value);
      if (*endian != "little") parse_fail(line_no, "only little endian is supported");
    } else if (key == "spacings") {
      const auto v = parse_numbers(value, line_no);
      if (v.size() != 3 || !(v[0] > 0 && v[1] > 0 && v[2] > 0)) {
        parse_fail(line_no, "spacings needs 3 positive values");
      }
      spacing = Spacing{v[0], v[1], v[2]};
    } else if (key == "space directions") {
      const auto v = parse_numbers(value, line_no);
      if (v.size() != 9) parse_fail(line_no, "space directions needs 3 vectors");
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
          if (r != c && v[3 * r + c] != 0.0) {
            parse_fail(line_no, "only diagonal space directions are supported");
          }
        }
        if (v[4 * r] == 0.0) parse_fail(line_no, "zero spacing in space directions");
      }
      spacing = Spacing{std::abs(v[0]), std::abs(v[4]), std::abs(v[8])};
    } else if (ignored_field(key)) {
      // Descriptive fields with no effect on the voxel grid.
    } else {
      parse_fail(line_no, "unsupported field '" + key + "'");
    }
  }
  if (!terminated) {
    throw Error(ErrorKind::kParse, "nrrd header not terminated by a blank line");
  }
  if (!type) throw Error(ErrorKind::kParse, "nrrd header missing 'type'");
  if (!dimension) throw Error(ErrorKind::kParse, "nrrd header missing 'dimension'");
  if (!sizes) throw Error(ErrorKind::kParse, "nrrd header missing 'sizes'");
  if (!encoding) throw Error(ErrorKind::kParse, "nrrd header missing 'encoding'");
  if (!endian && scalar_size(*type) > 1) {
    throw Error(ErrorKind::kParse, "nrrd header missing 'endian'");
  }

  img.header.type = *type;
  img.header.dims = Dims{static_cast<int>((*sizes)[0]), static_cast<int>((*sizes)[1]),
                         static_cast<int>((*sizes)[2])};
  img.header.spacing = spacing.value_or(Spacing{});

  const std::size_t n = img.header.dims.size();
  const std::size_t elem = scalar_size(*type);
  const std::size_t payload = bytes.size() - pos;
  if (payload < n * elem) {
    throw Error(ErrorKind::kTruncation,
                "nrrd payload has " + std::to_string(payload) + " bytes, expected " +
                    std::to_string(n * elem));
  }
  if (payload > n * elem) {
    throw Error(ErrorKind::kValidation,
                "nrrd payload has " + std::to_string(payload - n * elem) +
                    " trailing bytes");
  }
  const char* p = bytes.data() + pos;
  img.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (*type) {
      case ScalarType::kFloat32: img.values[i] = get_le<float>(p + 4 * i); break;
      case ScalarType::kInt16: img.values[i] = get_le<std::int16_t>(p + 2 * i); break;
      case ScalarType::kUInt8: img.values[i] = static_cast<unsigned char>(p[i]); break;
    }
  }
  return img;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorKind::kIo, "read failed for '" + path.string() + "'");
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path.string() + "'");
}

NrrdImage read_nrrd(const std::filesystem::path& path) {
  return parse_nrrd(read_file(path));
}

Volume to_volume(const NrrdImage& img) {
  std::vector<float> data(img.values.begin(), img.values.end());
  return Volume(img.header.dims, img.header.spacing, std::move(data));
}

LabelMap to_label_map(const NrrdImage& img) {
  std::vector<std::uint8_t> labels(img.values.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = img.values[i];
    if (v != 0.0 && v != 1.0) {
      throw Error(ErrorKind::kValidation,
                  "label map value " + std::to_string(v) + " at voxel " +
                      std::to_string(i) + " is not 0 or 1");
    }
    labels[i] = static_cast<std::uint8_t>(v);
  }
  return LabelMap(img.header.dims, std::move(labels));
}

ProbMap to_prob_map(const NrrdImage& img) {
  std::vector<float> prob(img.values.size());
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double v = img.values[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(ErrorKind::kValidation, "probability " + std::to_string(v) +
                                              " at voxel " + std::to_string(i) +
                                              " outside [0,1]");
    }
    prob[i] = static_cast<float>(v);
  }
  return ProbMap(img.header.dims, std::move(prob));
}

Volume read_volume(const std::filesystem::path& path) { return to_volume(read_nrrd(path)); }
LabelMap read_label_map(const std::filesystem::path& path) {
  return to_label_map(read_nrrd(path));
}
ProbMap read_prob_map(const std::filesystem::path& path) {
  return to_prob_map(read_nrrd(path));
}

std::string encode_nrrd_f32(const Dims& dims, const Spacing& spacing,
                            std::span<const float> values) {
  if (values.size() != dims.size()) {
    throw Error(ErrorKind::kValidation, "value count does not match dims");
  }
  std::string out = header_text(ScalarType::kFloat32, dims, spacing);
  out.reserve(out.size() + 4 * values.size());
  for (float v : values) put_le(out, v);
  return out;
}

std::string encode_nrrd_u8(const Dims& dims, const Spacing& spacing,
                           std::span<const std::uint8_t> values) {
  if (values.size() != dims.size()) {
    throw Error(ErrorKind::kValidation, "value count does not match dims");
  }
  std::string out = header_text(ScalarType::kUInt8, dims, spacing);
  out.append(reinterpret_cast<const char*>(values.data()), values.size());
  return out;
}

std::string encode_nrrd_i16(const Dims& dims, const Spacing& spacing,
                            std::span<const std::int16_t> values) {
  if (values.size() != dims.size()) {
    throw Error(ErrorKind::kValidation, "value count does not match dims");
  }
  std::string out = header_text(ScalarType::kInt16, dims, spacing);
  for (auto v : values) put_le(out, v);
  return out;
}

std::string encode_nrrd(const Volume& v) {
  return encode_nrrd_f32(v.dims(), v.spacing(), v.data());
}
std::string encode_nrrd(const LabelMap& m, const Spacing& spacing) {
  return encode_nrrd_u8(m.dims, spacing, m.labels);
}
std::string encode_nrrd(const ProbMap& m, const Spacing& spacing) {
  return encode_nrrd_f32(m.dims, spacing, m.prob);
}

void write_nrrd(const Volume& v, const std::filesystem::path& path) {
  write_file(path, encode_nrrd(v));
}
void write_nrrd(const LabelMap& m, const std::filesystem::path& path,
                const Spacing& spacing) {
  write_file(path, encode_nrrd(m, spacing));
}
void write_nrrd(const ProbMap& m, const std::filesystem::path& path,
                const Spacing& spacing) {
  write_file(path, encode_nrrd(m, spacing));
}
void write_nrrd_f32(const Dims& dims, const Spacing& spacing,
                    std::span<const float> values, const std::filesystem::path& path) {
  write_file(path, encode_nrrd_f32(dims, spacing, values));
}

namespace {

using Run = std::pair<std::uint32_t, std::uint32_t>;

std::vector<Run> to_runs(const std::set<std::size_t>& idx) {
  std::vector<Run> runs;
  for (auto i : idx) {
    const auto v = static_cast<std::uint32_t>(i);
    if (!runs.empty() && runs.back().first + runs.back().second == v) {
      ++runs.back().second;
    } else {
      runs.emplace_back(v, 1);
    }
  }
  return runs;
}

constexpr char kScribbleMagic[4] = {'S', 'C', 'R', 'B'};

}  // namespace

std::string encode_scribbles(const ScribbleSet& s) {
  if (s.dims().size() > 0xFFFFFFFFull) {
    throw Error(ErrorKind::kValidation, "grid too large for scribble file");
  }
  std::string out(kScribbleMagic, 4);
  put_le<std::uint32_t>(out, 1);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.dims().nx));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.dims().ny));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.dims().nz));
  for (const auto* set : {&s.foreground(), &s.background()}) {
    const auto runs = to_runs(*set);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(runs.size()));
    for (const auto& [start, len] : runs) {
      put_le(out, start);
      put_le(out, len);
    }
  }
  return out;
}

ScribbleSet decode_scribbles(std::string_view bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) {
      throw Error(ErrorKind::kTruncation, "scribble file truncated at byte " +
                                              std::to_string(pos));
    }
  };
  auto u32 = [&] {
    need(4);
    const auto v = get_le<std::uint32_t>(bytes.data() + pos);
    pos += 4;
    return v;
  };
  need(4);
  if (std::memcmp(bytes.data(), kScribbleMagic, 4) != 0) {
    throw Error(ErrorKind::kParse, "bad scribble file magic");
  }
  pos = 4;
  const auto version = u32();
  if (version != 1) {
    throw Error(ErrorKind::kParse,
                "unsupported scribble file version " + std::to_string(version));
  }
  const auto nx = u32(), ny = u32(), nz = u32();
  if (nx == 0 || ny == 0 || nz == 0 || nx > (1u << 20) || ny > (1u << 20) ||
      nz > (1u << 20)) {
    throw Error(ErrorKind::kValidation, "invalid scribble grid dims");
  }
  const Dims dims{static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(nz)};
  ScribbleSet s(dims);
  std::vector<Run> lists[2];
  for (auto& runs : lists) {
    const auto count = u32();
    need(static_cast<std::size_t>(count) * 8);
    runs.reserve(count);
    std::uint64_t prev_end = 0;
    for (std::uint32_t r = 0; r < count; ++r) {
      const auto start = u32();
      const auto len = u32();
      const std::uint64_t end = std::uint64_t{start} + len;
      if (len == 0) throw Error(ErrorKind::kValidation, "zero-length scribble run");
      if (end > dims.size()) {
        throw Error(ErrorKind::kValidation, "scribble run outside grid");
      }
      if (r > 0 && start < prev_end) {
        throw Error(ErrorKind::kValidation, "scribble runs unsorted or overlapping");
      }
      prev_end = end;
      runs.emplace_back(start, len);
    }
  }
  if (pos != bytes.size()) {
    throw Error(ErrorKind::kValidation, "trailing bytes after scribble runs");
  }
  // Both lists are sorted, so a merge walk finds any fg/bg overlap.
  std::size_t a = 0, b = 0;
  while (a < lists[0].size() && b < lists[1].size()) {
    const auto& fa = lists[0][a];
    const auto& bb = lists[1][b];
    if (std::uint64_t{fa.first} + fa.second <= bb.first) {
      ++a;
    } else if (std::uint64_t{bb.first} + bb.second <= fa.first) {
      ++b;
    } else {
      throw Error(ErrorKind::kValidation, "foreground and background runs overlap");
    }
  }
  for (const auto& [start, len] : lists[0]) {
    for (std::uint32_t i = 0; i < len; ++i) s.add(start + i, Label::kForeground);
  }
  for (const auto& [start, len] : lists[1]) {
    for (std::uint32_t i = 0; i < len; ++i) s.add(start + i, Label::kBackground);
  }
  return s;
}

ScribbleSet read_scribbles(const std::filesystem::path& path) {
  return decode_scribbles(read_file(path));
}

void write_scribbles(const ScribbleSet& s, const std::filesystem::path& path) {
  write_file(path, encode_scribbles(s));
}

}  // namespace monetseg
