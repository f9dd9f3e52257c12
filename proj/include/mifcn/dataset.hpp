#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mifcn/tensor.hpp"

namespace mifcn {

struct Rect {
  Index top = 0;
  Index left = 0;
  Index height = 0;
  Index width = 0;

  Index bottom() const { return top + height; }
  Index right() const { return left + width; }
  Index area() const { return height * width; }
  bool inside(Index rows, Index cols) const {
    return top >= 0 && left >= 0 && height >= 0 && width >= 0 && bottom() <= rows && right() <= cols;
  }
  bool overlaps(const Rect& o) const {
    return top < o.bottom() && o.top < bottom() && left < o.right() && o.left < right();
  }
  friend bool operator==(const Rect&, const Rect&) = default;
};

struct Location {
  Index row = 0;
  Index col = 0;
  friend bool operator==(const Location&, const Location&) = default;
};

/// A noisy image, its high-SNR counterpart, and the retina crop used for patch extraction.
struct ImagePair {
  std::string name;
  Tensor noisy;
  Tensor high_snr;
  Rect crop;
};

/// One training sample: T (noisy, high-SNR) windows at identical coordinates. Entry 0 is the
/// anchor; entries 1..T-1 are its most similar windows in ascending distance.
struct PatchTuple {
  std::vector<Tensor> noisy;
  std::vector<Tensor> clean;
  std::vector<Location> locations;

  std::size_t size() const { return noisy.size(); }
};

/// Main noisy image, its T-1 neighbouring B-scans, and the high-SNR reference.
struct TestCase {
  std::string name;
  Tensor main;
  std::vector<Tensor> nearby;
  Tensor reference;

  /// main followed by nearby, the branch input order.
  std::vector<Tensor> inputs() const;
};

struct DatasetConfig {
  Index patch_size = 15;
  Index patches_per_image = 400;
  int branches = 5;
};

struct PatchGrid {
  std::vector<Location> anchors;
  Index stride = 0;
  Index candidates = 0;
};

/// size x size window with top-left corner at `at`.
Tensor window(const Tensor& image, Location at, Index size);

/// Regular grid over `crop` using the largest stride that still yields at least `budget`
/// windows, truncated to `budget` in row-major order.
PatchGrid extract_patches(const Rect& crop, Index size, Index budget);

/// The anchor followed by the `count - 1` windows inside `crop` with smallest sum of squared
/// differences to it in `image`, searched exhaustively at stride 1. Ties go to the earlier
/// window in row-major order.
std::vector<Location> nonlocal_search(const Tensor& image, const Rect& crop, Location anchor, Index size, int count);

/// Sum of squared differences between two equally sized windows of `image`.
double window_ssd(const Tensor& image, Location a, Location b, Index size);

struct TrainingSet {
  std::vector<PatchTuple> tuples;
  std::vector<Index> strides;  // one per image pair
};

/// Anchors from every pair, each expanded to a tuple by searching its high-SNR image.
TrainingSet build_training_set(const std::vector<ImagePair>& pairs, const DatasetConfig& config);

/// Parses `filename top left height width` lines; '#' starts a comment.
struct CropEntry {
  std::string filename;
  Rect rect;
};
std::vector<CropEntry> read_crop_file(const std::filesystem::path& path);

/// Loads `<dir>/noisy/<f>` and `<dir>/ref/<f>` for every file f listed in the crop file.
std::vector<ImagePair> load_training_pairs(const std::filesystem::path& dir, const std::filesystem::path& crop_file);

/// Directory layout: main.pgm, near1.pgm .. near{T-1}.pgm, ref.pgm.
TestCase load_test_case(const std::filesystem::path& dir, int branches);

/// A directory holding main.* is one test case; otherwise each subdirectory is (sorted by name).
std::vector<std::filesystem::path> find_test_cases(const std::filesystem::path& dir);

struct NamedRect {
  std::string name;
  Rect rect;
};

/// One background region and at least one foreground region.
struct RoiSpec {
  Rect background;
  std::vector<NamedRect> foreground;

  /// Throws PreconditionError unless every region lies inside rows x cols.
  void check(Index rows, Index cols) const;
};

/// `role top left height width` lines with exactly one `background` role; every other role
/// names a foreground region.
RoiSpec read_roi_file(const std::filesystem::path& path);

// Patch archive produced by build-dataset:
//   "MIFCNPAT" | u32 version | u32 T | u32 patch size | u64 count
//   | count x (T x (i64 row, i64 col), T noisy windows, T clean windows as f64 size*size)
inline constexpr std::uint32_t kArchiveVersion = 1;

void write_patch_archive(std::ostream& os, const std::vector<PatchTuple>& tuples, Index patch_size);
std::vector<PatchTuple> read_patch_archive(std::istream& is);
void save_patch_archive(const std::vector<PatchTuple>& tuples, Index patch_size, const std::filesystem::path& path);
std::vector<PatchTuple> load_patch_archive(const std::filesystem::path& path);

}  // namespace mifcn
