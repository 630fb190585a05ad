// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>

#include "microlab/error.hpp"
#include "microlab/tasks.hpp"

namespace fs = std::filesystem;

namespace microlab {

namespace {

constexpr const char* kImageSuffix = ".img.pgm";
constexpr const char* kMaskSuffix = ".mask.pgm";

struct Gray8 {
  std::size_t width = 0, height = 0;
  std::vector<unsigned char> pixels;
};

void skip_space_and_comments(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

Gray8 read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5')
    throw DataError(path.string() + ": not a binary PGM (P5) file");
  long long w = 0, h = 0, maxval = 0;
  skip_space_and_comments(in);
  in >> w;
  skip_space_and_comments(in);
  in >> h;
  skip_space_and_comments(in);
  in >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw DataError(path.string() + ": malformed PGM header (8-bit P5 expected)");
  in.get();  // single whitespace before the raster
  Gray8 img;
  img.width = static_cast<std::size_t>(w);
  img.height = static_cast<std::size_t>(h);
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw DataError(path.string() + ": truncated PGM raster");
  if (maxval != 255)
    for (auto& p : img.pixels) p = static_cast<unsigned char>(std::lround(p * 255.0 / maxval));
  return img;
}

void write_pgm(const fs::path& path, std::size_t w, std::size_t h, const std::vector<unsigned char>& px) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Numeric basenames sort numerically, everything else lexicographically after them.
bool basename_less(const std::string& a, const std::string& b) {
  const bool na = !a.empty() && std::all_of(a.begin(), a.end(), ::isdigit);
  const bool nb = !b.empty() && std::all_of(b.begin(), b.end(), ::isdigit);
  if (na && nb) return a.size() != b.size() ? a.size() < b.size() : a < b;
  if (na != nb) return na;
  return a < b;
}

}  // namespace

void save_dataset(std::span<const Task> tasks, const fs::path& root) {
  fs::create_directories(root);
  for (const Task& task : tasks) {
    const fs::path dir = root / task.id;
    fs::create_directories(dir);
    for (std::size_t k = 0; k < task.examples.size(); ++k) {
      const Example& ex = task.examples[k];
      const std::size_t h = ex.image.dim(1), w = ex.image.dim(2);
      std::vector<unsigned char> img(h * w), mask(h * w);
      for (std::size_t i = 0; i < h * w; ++i) {
        img[i] = static_cast<unsigned char>(std::lround(std::clamp(ex.image[i], 0.0, 1.0) * 255.0));
        mask[i] = ex.mask[i] > 0.5 ? 255 : 0;
      }
      write_pgm(dir / (std::to_string(k) + kImageSuffix), w, h, img);
      write_pgm(dir / (std::to_string(k) + kMaskSuffix), w, h, mask);
    }
  }
}

std::vector<Task> load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  if (dirs.empty()) {
    std::cerr << "warning: dataset root " << root.string() << " contains no task directories\n";
    return {};
  }

  std::vector<Task> tasks;
  std::size_t expected_hw = 0;
  for (const auto& dir : dirs) {
    std::map<std::string, std::pair<bool, bool>> pairs;  // basename -> (has image, has mask)
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      const std::string name = entry.path().filename().string();
      if (ends_with(name, kImageSuffix))
        pairs[name.substr(0, name.size() - std::string(kImageSuffix).size())].first = true;
      else if (ends_with(name, kMaskSuffix))
        pairs[name.substr(0, name.size() - std::string(kMaskSuffix).size())].second = true;
    }
    std::vector<std::string> bases;
    for (const auto& [base, has] : pairs) {
      if (!has.first) throw DataError((dir / (base + kMaskSuffix)).string() + ": mask '" + base + "' has no image");
      if (!has.second) throw DataError((dir / (base + kImageSuffix)).string() + ": image '" + base + "' has no mask");
      bases.push_back(base);
    }
    std::sort(bases.begin(), bases.end(), basename_less);

    Task task;
    task.id = dir.filename().string();
    for (const auto& base : bases) {
      const fs::path ip = dir / (base + kImageSuffix), mp = dir / (base + kMaskSuffix);
      const Gray8 img = read_pgm(ip), msk = read_pgm(mp);
      if (img.width != msk.width || img.height != msk.height)
        throw DataError(mp.string() + ": mask size differs from image '" + base + "'");
      if (img.width != img.height)
        throw DataError(ip.string() + ": images must be square");
      if (expected_hw == 0) expected_hw = img.width;
      if (img.width != expected_hw)
        throw DataError(ip.string() + ": size " + std::to_string(img.width) + " differs from dataset size " +
                        std::to_string(expected_hw));
      const std::size_t hw = img.width;
      Example ex{Tensor({1, hw, hw}), Tensor({1, hw, hw})};
      for (std::size_t i = 0; i < hw * hw; ++i) {
        ex.image[i] = img.pixels[i] / 255.0;
        ex.mask[i] = msk.pixels[i] >= 128 ? 1.0 : 0.0;
      }
      task.examples.push_back(std::move(ex));
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

}  // namespace microlab
