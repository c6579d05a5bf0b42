#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "asconv/training.hpp"

namespace asconv {

struct DatasetEntry {
  std::string stem;
  std::string hr_path;
  std::string lr_path;
  std::size_t hr_width = 0, hr_height = 0;
  std::size_t lr_width = 0, lr_height = 0;
  bool synthesized = false;  // LR produced by bicubic downscaling into LR_gen/
};

struct DatasetIndex {
  std::string root;
  std::vector<DatasetEntry> pairs;  // sorted by stem
};

/// Scans root/HR/*.png and pairs each image with root/LR/<stem>.png (or
/// <stem>x2.png). Images without an LR counterpart get one synthesized by
/// bicubic x1/2 downscaling, cached as root/LR_gen/<stem>.png and reused
/// on later scans. Throws IoError when HR/ is missing or holds no PNG and
/// ShapeError naming the file when HR is not exactly twice the LR size.
DatasetIndex dataset_scan(const std::string& root);

/// Decodes every pair into memory.
std::vector<ImagePair> load_dataset(const DatasetIndex& index);

}  // namespace asconv
