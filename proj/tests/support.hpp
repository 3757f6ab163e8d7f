#pragma once

#include "birads/lexicon.hpp"
#include "birads/random.hpp"

#include <unistd.h>

#include <filesystem>
#include <string>

namespace birads::testing {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("birads_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline int draw_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

/// Random label set satisfying the margin consistency rule.
inline DescriptorLabels random_labels(Rng& rng) {
  DescriptorLabels l;
  l.shape = static_cast<Shape>(draw_int(rng, 0, kShapeCount - 1));
  l.orientation = static_cast<Orientation>(draw_int(rng, 0, kOrientationCount - 1));
  l.echo = static_cast<EchoPattern>(draw_int(rng, 0, kEchoCount - 1));
  l.posterior = static_cast<Posterior>(draw_int(rng, 0, kPosteriorCount - 1));
  l.margin.circumscribed = draw_int(rng, 0, 1) == 1;
  if (!l.margin.circumscribed) {
    while (true) {
      bool any = false;
      for (auto& s : l.margin.subtypes) any |= (s = draw_int(rng, 0, 1) == 1);
      if (any) break;
    }
  }
  return l;
}

}  // namespace birads::testing
