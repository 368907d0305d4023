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

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "monetseg/volume.hpp"

namespace monetseg {

enum class ScalarType { kFloat32, kInt16, kUInt8 };

std::size_t scalar_size(ScalarType t);
const char* nrrd_type_name(ScalarType t);

/// Parsed header of the supported NRRD subset: 3-D, raw encoding, little
/// endian, diagonal spacing.
struct NrrdHeader {
  ScalarType type = ScalarType::kFloat32;
  Dims dims;
  Spacing spacing;
};

/// Header plus voxel values widened to double for validation/conversion.
struct NrrdImage {
  NrrdHeader header;
  std::vector<double> values;
};

NrrdImage parse_nrrd(std::string_view bytes);
NrrdImage read_nrrd(const std::filesystem::path& path);

Volume read_volume(const std::filesystem::path& path);
LabelMap read_label_map(const std::filesystem::path& path);
ProbMap read_prob_map(const std::filesystem::path& path);

Volume to_volume(const NrrdImage& img);
LabelMap to_label_map(const NrrdImage& img);
ProbMap to_prob_map(const NrrdImage& img);

/// Serializes a float32 field; non-finite values (distance maps) are allowed.
std::string encode_nrrd_f32(const Dims& dims, const Spacing& spacing,
                            std::span<const float> values);
std::string encode_nrrd_u8(const Dims& dims, const Spacing& spacing,
                           std::span<const std::uint8_t> values);
std::string encode_nrrd_i16(const Dims& dims, const Spacing& spacing,
                            std::span<const std::int16_t> values);

std::string encode_nrrd(const Volume& v);
std::string encode_nrrd(const LabelMap& m, const Spacing& spacing = {});
std::string encode_nrrd(const ProbMap& m, const Spacing& spacing = {});

void write_nrrd(const Volume& v, const std::filesystem::path& path);
void write_nrrd(const LabelMap& m, const std::filesystem::path& path,
                const Spacing& spacing = {});
void write_nrrd(const ProbMap& m, const std::filesystem::path& path,
                const Spacing& spacing = {});
void write_nrrd_f32(const Dims& dims, const Spacing& spacing,
                    std::span<const float> values, const std::filesystem::path& path);

// Scribble file, version 1:
//   "SCRB" | u32 version | u32 nx, ny, nz |
//   u32 fg_runs | fg_runs x (u32 start, u32 length) |
//   u32 bg_runs | bg_runs x (u32 start, u32 length)
// All integers little endian; runs sorted and non-overlapping.
std::string encode_scribbles(const ScribbleSet& s);
ScribbleSet decode_scribbles(std::string_view bytes);
ScribbleSet read_scribbles(const std::filesystem::path& path);
void write_scribbles(const ScribbleSet& s, const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace monetseg
