#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "dras/dataset.hpp"

namespace test {

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("dras_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

// identities x ages procedural faces held in memory.
inline dras::ImageSet toy_set(int identities, const std::vector<int>& ages) {
  std::vector<dras::ImageRecord> records;
  std::vector<dras::RawImage> images;
  for (int id = 0; id < identities; ++id)
    for (int age : ages) {
      dras::ImageRecord r;
      r.path = "toy/" + std::to_string(id) + "_" + std::to_string(age) + ".png";
      r.age = age;
      r.age_group = dras::assign_age_group(age);
      r.identity = "id" + std::to_string(id);
      records.push_back(r);
      images.push_back(dras::make_toy_face(id, age));
    }
  return dras::make_image_set(std::move(records), images);
}

}  // namespace test
