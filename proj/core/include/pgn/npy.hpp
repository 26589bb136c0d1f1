#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "pgn/tensor.hpp"

namespace pgn {

// NPY format version 1.0, little-endian, C order. Float tensors are '<f4' or
// '<f8'; label maps may be any fixed-width integer or bool dtype on input and
// are always written as '<i4'.

std::vector<std::byte> encode_npy(const Tensor& tensor);
Tensor decode_npy(std::span<const std::byte> bytes);

std::vector<std::byte> encode_npy(const LabelMap& labels);
LabelMap decode_npy_labels(std::span<const std::byte> bytes);

Tensor read_npy(const std::filesystem::path& path);
void write_npy(const Tensor& tensor, const std::filesystem::path& path);

LabelMap read_npy_labels(const std::filesystem::path& path);
void write_npy_labels(const LabelMap& labels, const std::filesystem::path& path);

std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(std::span<const std::byte> bytes, const std::filesystem::path& path);

}  // namespace pgn
