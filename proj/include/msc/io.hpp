#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "msc/geometry.hpp"
#include "msc/model.hpp"
#include "msc/tensor.hpp"

// File formats:
//  - checkpoint: directory with manifest.json (ordered list of {name, shape,
//    dtype}) and weights.bin, little-endian f32 arrays concatenated in
//    manifest order
//  - video: directory with manifest.json ({shape, dtype}) and frames.bin
//  - masks as PBM (P1), frame renders as PGM (P2)

namespace msc::io {

namespace fs = std::filesystem;

void save_checkpoint(const fs::path& dir, const std::vector<NamedTensor<float>>& tensors,
                     const std::string& manifest_name = "manifest.json",
                     const std::string& weights_name = "weights.bin");
std::vector<NamedTensor<float>> load_checkpoint(const fs::path& dir,
                                                const std::string& manifest_name = "manifest.json",
                                                const std::string& weights_name = "weights.bin");

void save_video(const fs::path& dir, const Tensor<float>& video);
Tensor<float> load_video(const fs::path& dir);

std::string pbm_string(const Mask& m);
void write_pbm(const fs::path& path, const Mask& m);

// Renders one H x W channel slice, min-max normalized to 0..255.
void write_pgm(const fs::path& path, const float* frame, std::int64_t h, std::int64_t w);

void write_text_file(const fs::path& path, const std::string& content);
std::string read_text_file(const fs::path& path);

}  // namespace msc::io
