#include "asconv/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>

#include "asconv/image_io.hpp"
#include "asconv/resize.hpp"

namespace fs = std::filesystem;

namespace asconv {
namespace {

bool is_png(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

std::string find_lr(const fs::path& dir, const std::string& stem) {
  if (!fs::is_directory(dir)) return {};
  for (const std::string& name : {stem + ".png", stem + "x2.png", stem + ".PNG"}) {
    const fs::path p = dir / name;
    if (fs::is_regular_file(p)) return p.string();
  }
  return {};
}

}  // namespace

DatasetIndex dataset_scan(const std::string& root) {
  const fs::path hr_dir = fs::path(root) / "HR";
  if (!fs::is_directory(hr_dir)) throw IoError("dataset '" + root + "': missing HR/ directory");
  std::vector<fs::path> hr_files;
  for (const auto& e : fs::directory_iterator(hr_dir)) {
    if (e.is_regular_file() && is_png(e.path())) hr_files.push_back(e.path());
  }
  if (hr_files.empty()) throw IoError("dataset '" + root + "': HR/ contains no PNG images");
  std::sort(hr_files.begin(), hr_files.end(),
            [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });

  DatasetIndex index;
  index.root = root;
  const fs::path lr_dir = fs::path(root) / "LR";
  const fs::path gen_dir = fs::path(root) / "LR_gen";
  for (const auto& hr : hr_files) {
    DatasetEntry entry;
    entry.stem = hr.stem().string();
    entry.hr_path = hr.string();
    std::tie(entry.hr_width, entry.hr_height) = png_dimensions(entry.hr_path);
    entry.lr_path = find_lr(lr_dir, entry.stem);
    if (entry.lr_path.empty()) {
      if (entry.hr_width % 2 != 0 || entry.hr_height % 2 != 0) {
        throw ShapeError("dataset: '" + entry.hr_path + "' has odd size " +
                         std::to_string(entry.hr_width) + "x" + std::to_string(entry.hr_height) +
                         "; cannot synthesize a x2 LR image");
      }
      entry.synthesized = true;
      const fs::path cached = gen_dir / (entry.stem + ".png");
      entry.lr_path = cached.string();
      bool reuse = fs::is_regular_file(cached);
      if (reuse) {
        auto [w, h] = png_dimensions(entry.lr_path);
        reuse = 2 * w == entry.hr_width && 2 * h == entry.hr_height &&
                fs::last_write_time(cached) >= fs::last_write_time(hr);
      }
      if (!reuse) {
        fs::create_directories(gen_dir);
        const TensorF img = png_read(entry.hr_path);
        png_write(bicubic_resize(img, entry.hr_height / 2, entry.hr_width / 2), entry.lr_path);
      }
    }
    std::tie(entry.lr_width, entry.lr_height) = png_dimensions(entry.lr_path);
    if (entry.hr_width != 2 * entry.lr_width || entry.hr_height != 2 * entry.lr_height) {
      throw ShapeError("dataset: '" + entry.lr_path + "' is " + std::to_string(entry.lr_width) +
                       "x" + std::to_string(entry.lr_height) + " but its HR image is " +
                       std::to_string(entry.hr_width) + "x" + std::to_string(entry.hr_height) +
                       " (expected exactly twice the LR size)");
    }
    index.pairs.push_back(std::move(entry));
  }
  return index;
}

std::vector<ImagePair> load_dataset(const DatasetIndex& index) {
  std::vector<ImagePair> out;
  out.reserve(index.pairs.size());
  for (const auto& e : index.pairs) {
    out.push_back(ImagePair{e.stem, png_read(e.lr_path), png_read(e.hr_path)});
  }
  return out;
}

}  // namespace asconv
