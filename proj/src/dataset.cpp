#include "mifcn/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "mifcn/binary_io.hpp"
#include "mifcn/image_io.hpp"

namespace fs = std::filesystem;

namespace mifcn {

std::vector<Tensor> TestCase::inputs() const {
  std::vector<Tensor> out{main};
  out.insert(out.end(), nearby.begin(), nearby.end());
  return out;
}

Tensor window(const Tensor& image, Location at, Index size) {
  require(image.rank() == 2, "window: image must be [H,W]");
  require(at.row >= 0 && at.col >= 0 && at.row + size <= image.dim(0) && at.col + size <= image.dim(1),
          "window: " + std::to_string(size) + "x" + std::to_string(size) + " window at (" + std::to_string(at.row) +
              "," + std::to_string(at.col) + ") leaves image " + shape_string(image.shape()));
  Tensor out({size, size});
  out.matrix() = image.matrix().block(at.row, at.col, size, size);
  return out;
}

PatchGrid extract_patches(const Rect& crop, Index size, Index budget) {
  require(size >= 1 && budget >= 1, "extract_patches: patch size and budget must be positive");
  if (crop.height < size || crop.width < size)
    throw DataError("extract_patches: crop " + std::to_string(crop.height) + "x" + std::to_string(crop.width) +
                    " is smaller than a " + std::to_string(size) + "x" + std::to_string(size) + " patch");
  const auto count = [&](Index stride) {
    return ((crop.height - size) / stride + 1) * ((crop.width - size) / stride + 1);
  };
  // Window count is non-increasing in the stride, so scan down from the widest useful one.
  Index stride = std::max(crop.height, crop.width);
  while (stride > 1 && count(stride) < budget) --stride;
  if (count(stride) < budget)
    throw DataError("extract_patches: crop yields at most " + std::to_string(count(1)) + " patches, " +
                    std::to_string(budget) + " requested");

  PatchGrid grid;
  grid.stride = stride;
  grid.candidates = count(stride);
  for (Index r = crop.top; r + size <= crop.bottom(); r += stride)
    for (Index c = crop.left; c + size <= crop.right(); c += stride)
      if (static_cast<Index>(grid.anchors.size()) < budget) grid.anchors.push_back({r, c});
  return grid;
}

double window_ssd(const Tensor& image, Location a, Location b, Index size) {
  return (image.matrix().block(a.row, a.col, size, size) - image.matrix().block(b.row, b.col, size, size))
      .squaredNorm();
}

std::vector<Location> nonlocal_search(const Tensor& image, const Rect& crop, Location anchor, Index size, int count) {
  require(count >= 1, "nonlocal_search: T must be >= 1");
  require(image.rank() == 2 && crop.inside(image.dim(0), image.dim(1)), "nonlocal_search: crop outside image");
  require(anchor.row >= crop.top && anchor.col >= crop.left && anchor.row + size <= crop.bottom() &&
              anchor.col + size <= crop.right(),
          "nonlocal_search: anchor window leaves the crop");
  const Index rows = crop.height - size + 1, cols = crop.width - size + 1;
  if (rows * cols < count)
    throw DataError("nonlocal_search: only " + std::to_string(rows * cols) + " candidate windows, T=" +
                    std::to_string(count) + " requested");

  struct Match {
    double ssd;
    Location at;
  };
  const std::size_t wanted = static_cast<std::size_t>(count - 1);
  std::vector<Match> best;  // sorted by ssd; equal ssd kept in scan order
  best.reserve(wanted + 1);
  const auto& img = image.matrix();
  const auto reference = img.block(anchor.row, anchor.col, size, size);

  for (Index r = crop.top; wanted > 0 && r + size <= crop.bottom(); ++r) {
    for (Index c = crop.left; c + size <= crop.right(); ++c) {
      if (r == anchor.row && c == anchor.col) continue;
      const double limit = best.size() == wanted ? best.back().ssd : std::numeric_limits<double>::infinity();
      double ssd = 0.0;
      for (Index y = 0; y < size && ssd <= limit; ++y)
        ssd += (img.row(r + y).segment(c, size) - reference.row(y)).squaredNorm();
      if (!(ssd < limit)) continue;
      const auto pos = std::upper_bound(best.begin(), best.end(), ssd,
                                        [](double v, const Match& m) { return v < m.ssd; });
      best.insert(pos, Match{ssd, {r, c}});
      if (best.size() > wanted) best.pop_back();
    }
  }

  std::vector<Location> out{anchor};
  for (const Match& m : best) out.push_back(m.at);
  return out;
}

TrainingSet build_training_set(const std::vector<ImagePair>& pairs, const DatasetConfig& config) {
  if (pairs.empty()) throw DataError("build_training_set: no image pairs");
  TrainingSet set;
  for (const ImagePair& pair : pairs) {
    if (pair.noisy.shape() != pair.high_snr.shape())
      throw DataError("training pair '" + pair.name + "': noisy and high-SNR images differ in shape");
    if (!pair.crop.inside(pair.noisy.dim(0), pair.noisy.dim(1)))
      throw DataError("training pair '" + pair.name + "': crop rectangle outside the image");
    const PatchGrid grid = extract_patches(pair.crop, config.patch_size, config.patches_per_image);
    set.strides.push_back(grid.stride);
    for (const Location& anchor : grid.anchors) {
      PatchTuple tuple;
      tuple.locations = nonlocal_search(pair.high_snr, pair.crop, anchor, config.patch_size, config.branches);
      for (const Location& at : tuple.locations) {
        tuple.noisy.push_back(window(pair.noisy, at, config.patch_size));
        tuple.clean.push_back(window(pair.high_snr, at, config.patch_size));
      }
      set.tuples.push_back(std::move(tuple));
    }
  }
  return set;
}

namespace {

std::vector<std::string> content_lines(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  }
  return lines;
}

std::pair<std::string, Rect> parse_rect_line(const std::string& line, const fs::path& path) {
  std::istringstream ss(line);
  std::string name;
  Rect r;
  std::string extra;
  if (!(ss >> name >> r.top >> r.left >> r.height >> r.width) || (ss >> extra))
    throw DataError(path.string() + ": expected 'name top left height width', got '" + line + "'");
  if (r.top < 0 || r.left < 0 || r.height <= 0 || r.width <= 0)
    throw DataError(path.string() + ": rectangle must have non-negative origin and positive size: '" + line + "'");
  return {name, r};
}

fs::path find_with_stem(const fs::path& dir, const std::string& stem) {
  std::vector<fs::path> hits;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().stem() == stem) hits.push_back(entry.path());
  std::sort(hits.begin(), hits.end());
  if (hits.size() > 1) throw DataError(dir.string() + ": several files named " + stem + ".*");
  return hits.empty() ? fs::path{} : hits.front();
}

std::string listing(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
  return out.empty() ? "(empty)" : out;
}

}  // namespace

std::vector<CropEntry> read_crop_file(const fs::path& path) {
  std::vector<CropEntry> out;
  for (const std::string& line : content_lines(path)) {
    auto [name, rect] = parse_rect_line(line, path);
    out.push_back({name, rect});
  }
  if (out.empty()) throw DataError(path.string() + ": no crop rectangles");
  return out;
}

std::vector<ImagePair> load_training_pairs(const fs::path& dir, const fs::path& crop_file) {
  if (!fs::is_directory(dir / "noisy") || !fs::is_directory(dir / "ref"))
    throw DataError(dir.string() + ": training data needs noisy/ and ref/ subdirectories");
  std::vector<ImagePair> pairs;
  for (const CropEntry& entry : read_crop_file(crop_file)) {
    ImagePair pair;
    pair.name = entry.filename;
    pair.noisy = load_image(dir / "noisy" / entry.filename);
    pair.high_snr = load_image(dir / "ref" / entry.filename);
    pair.crop = entry.rect;
    if (pair.noisy.shape() != pair.high_snr.shape())
      throw DataError(entry.filename + ": noisy " + shape_string(pair.noisy.shape()) + " and reference " +
                      shape_string(pair.high_snr.shape()) + " differ in shape");
    if (!pair.crop.inside(pair.noisy.dim(0), pair.noisy.dim(1)))
      throw DataError(entry.filename + ": crop rectangle exceeds image " + shape_string(pair.noisy.shape()));
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

TestCase load_test_case(const fs::path& dir, int branches) {
  require(branches >= 1, "load_test_case: T must be >= 1");
  if (!fs::is_directory(dir)) throw DataError("test case directory not found: " + dir.string());
  TestCase tc;
  tc.name = dir.filename().string();
  const fs::path main = find_with_stem(dir, "main");
  const fs::path ref = find_with_stem(dir, "ref");
  std::vector<fs::path> near;
  for (int i = 1;; ++i) {
    fs::path p = find_with_stem(dir, "near" + std::to_string(i));
    if (p.empty()) break;
    near.push_back(p);
  }
  std::string missing;
  if (main.empty()) missing += " main.*";
  if (ref.empty()) missing += " ref.*";
  if (!missing.empty())
    throw DataError(dir.string() + ": missing" + missing + "; found: " + listing(dir));
  if (near.size() != static_cast<std::size_t>(branches - 1))
    throw DataError(dir.string() + ": found " + std::to_string(near.size()) + " nearby images (near1..), but T=" +
                    std::to_string(branches) + " needs " + std::to_string(branches - 1) + "; use T=" +
                    std::to_string(near.size() + 1) + " for this data");

  tc.main = load_image(main);
  tc.reference = load_image(ref);
  for (const auto& p : near) tc.nearby.push_back(load_image(p));
  const auto check = [&](const Tensor& t, const fs::path& p) {
    if (t.shape() != tc.main.shape())
      throw DataError(p.string() + ": shape " + shape_string(t.shape()) + " differs from main image " +
                      shape_string(tc.main.shape()));
  };
  check(tc.reference, ref);
  for (std::size_t i = 0; i < near.size(); ++i) check(tc.nearby[i], near[i]);
  return tc;
}

std::vector<fs::path> find_test_cases(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("test data directory not found: " + dir.string());
  if (!find_with_stem(dir, "main").empty()) return {dir};
  std::vector<fs::path> cases;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && !find_with_stem(entry.path(), "main").empty()) cases.push_back(entry.path());
  std::sort(cases.begin(), cases.end());
  if (cases.empty()) throw DataError(dir.string() + ": no test cases (directories holding main.*) found");
  return cases;
}

void RoiSpec::check(Index rows, Index cols) const {
  require(background.area() > 0 && background.inside(rows, cols), "ROI: background rectangle outside the image");
  require(!foreground.empty(), "ROI: at least one foreground region is required");
  for (const auto& fg : foreground) {
    require(fg.rect.area() > 0 && fg.rect.inside(rows, cols), "ROI: region '" + fg.name + "' outside the image");
    require(!fg.rect.overlaps(background), "ROI: region '" + fg.name + "' overlaps the background region");
  }
}

RoiSpec read_roi_file(const fs::path& path) {
  RoiSpec spec;
  int backgrounds = 0;
  for (const std::string& line : content_lines(path)) {
    auto [name, rect] = parse_rect_line(line, path);
    if (name == "background") {
      spec.background = rect;
      ++backgrounds;
    } else {
      spec.foreground.push_back({name, rect});
    }
  }
  if (backgrounds != 1)
    throw DataError(path.string() + ": expected exactly one 'background' region, found " + std::to_string(backgrounds));
  if (spec.foreground.empty()) throw DataError(path.string() + ": no foreground regions");
  for (const auto& fg : spec.foreground)
    if (fg.rect.overlaps(spec.background))
      throw DataError(path.string() + ": region '" + fg.name + "' overlaps the background region");
  return spec;
}

namespace {
constexpr std::string_view kArchiveMagic = "MIFCNPAT";
}

void write_patch_archive(std::ostream& os, const std::vector<PatchTuple>& tuples, Index patch_size) {
  const std::size_t branches = tuples.empty() ? 0 : tuples.front().size();
  io::BinaryWriter w(os);
  w.bytes(kArchiveMagic);
  w.u32(kArchiveVersion);
  w.u32(static_cast<std::uint32_t>(branches));
  w.u32(static_cast<std::uint32_t>(patch_size));
  w.u64(tuples.size());
  for (const PatchTuple& tuple : tuples) {
    require(tuple.size() == branches && tuple.clean.size() == branches && tuple.locations.size() == branches,
            "write_patch_archive: tuples disagree on T");
    for (const Location& at : tuple.locations) {
      w.i64(at.row);
      w.i64(at.col);
    }
    for (const auto* side : {&tuple.noisy, &tuple.clean})
      for (const Tensor& patch : *side) {
        require(patch.shape() == Shape({patch_size, patch_size}), "write_patch_archive: patch size mismatch");
        for (double v : patch.values()) w.f64(v);
      }
  }
}

std::vector<PatchTuple> read_patch_archive(std::istream& is) {
  io::BinaryReader r(is, "patch archive");
  if (r.bytes(kArchiveMagic.size()) != kArchiveMagic) throw DataError("patch archive: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kArchiveVersion) throw DataError("patch archive: unsupported version " + std::to_string(version));
  const std::uint32_t branches = r.u32();
  const Index size = r.u32();
  const std::uint64_t count = r.u64();
  if (branches == 0 && count > 0) throw DataError("patch archive: T=0 with nonzero tuple count");
  if (size <= 0 || size > 4096) throw DataError("patch archive: implausible patch size");
  std::vector<PatchTuple> tuples;
  for (std::uint64_t n = 0; n < count; ++n) {
    PatchTuple tuple;
    for (std::uint32_t t = 0; t < branches; ++t) {
      const Index row = r.i64();
      const Index col = r.i64();
      tuple.locations.push_back({row, col});
    }
    for (auto* side : {&tuple.noisy, &tuple.clean})
      for (std::uint32_t t = 0; t < branches; ++t) {
        Tensor patch({size, size});
        for (double& v : patch.values()) v = r.f64();
        side->push_back(std::move(patch));
      }
    tuples.push_back(std::move(tuple));
  }
  if (!r.at_end()) throw DataError("patch archive: trailing bytes after last tuple");
  return tuples;
}

void save_patch_archive(const std::vector<PatchTuple>& tuples, Index patch_size, const fs::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open archive for writing: " + path.string());
  write_patch_archive(os, tuples, patch_size);
  if (!os) throw DataError("failed writing archive: " + path.string());
}

std::vector<PatchTuple> load_patch_archive(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open patch archive: " + path.string());
  return read_patch_archive(is);
}

}  // namespace mifcn
