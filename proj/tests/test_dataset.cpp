#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "mifcn/dataset.hpp"
#include "mifcn/image_io.hpp"
#include "support.hpp"

using namespace mifcn;

namespace {

// Brute force: every window's SSD, stable-sorted so ties keep scan order.
std::vector<Location> exhaustive_search(const Tensor& image, const Rect& crop, Location anchor, Index size, int count) {
  std::vector<std::pair<double, Location>> all;
  for (Index r = crop.top; r + size <= crop.bottom(); ++r)
    for (Index c = crop.left; c + size <= crop.right(); ++c) {
      if (r == anchor.row && c == anchor.col) continue;
      double ssd = 0.0;
      for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x) {
          const double d = image(r + y, c + x) - image(anchor.row + y, anchor.col + x);
          ssd += d * d;
        }
      all.push_back({ssd, {r, c}});
    }
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Location> out{anchor};
  for (int i = 0; i + 1 < count; ++i) out.push_back(all[static_cast<std::size_t>(i)].second);
  return out;
}

Index enumerate_count(Index h, Index w, Index size, Index stride) {
  Index n = 0;
  for (Index r = 0; r + size <= h; r += stride)
    for (Index c = 0; c + size <= w; c += stride) ++n;
  return n;
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  std::filesystem::create_directories(path.parent_path());
  save_image(image, path);
}

Tensor integer_image(std::mt19937_64& rng, Index h, Index w) {
  Tensor t = testing::random_tensor(rng, {h, w}, 0.0, 255.0);
  for (double& v : t.values()) v = std::floor(v);
  return t;
}

}  // namespace

TEST_CASE("patch grid on a 150x600 crop") {
  const PatchGrid grid = extract_patches({10, 20, 150, 600}, 15, 400);
  CHECK(grid.stride == 15);
  CHECK(grid.anchors.size() == 400u);
  CHECK(grid.candidates >= 400);
  // Enumeration oracle: 15 is the largest stride with at least 400 windows.
  CHECK(enumerate_count(150, 600, 15, 15) >= 400);
  for (Index s = 16; s <= 600; ++s) CHECK(enumerate_count(150, 600, 15, s) < 400);
  CHECK(grid.anchors.front() == Location{10, 20});
  CHECK(grid.anchors[1] == Location{10, 35});
  for (const Location& a : grid.anchors) {
    CHECK(a.row >= 10);
    CHECK(a.col >= 20);
    CHECK(a.row + 15 <= 160);
    CHECK(a.col + 15 <= 620);
  }
}

TEST_CASE("patch grid edge cases") {
  const PatchGrid one = extract_patches({3, 4, 40, 40}, 15, 1);
  REQUIRE(one.anchors.size() == 1u);
  CHECK(one.anchors[0] == Location{3, 4});
  CHECK_THROWS_AS(extract_patches({0, 0, 10, 40}, 15, 1), DataError);
  try {
    extract_patches({0, 0, 16, 16}, 15, 5);
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("at most 4") != std::string::npos);
  }
  // Truncation keeps scan order.
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<Index> dim(15, 80), budget(1, 60);
  for (int n = 0; n < 50; ++n) {
    const Index h = dim(rng), w = dim(rng), b = std::min(budget(rng), enumerate_count(h, w, 15, 1));
    const PatchGrid g = extract_patches({0, 0, h, w}, 15, b);
    CHECK(static_cast<Index>(g.anchors.size()) == b);
    CHECK(enumerate_count(h, w, 15, g.stride) >= b);
    if (g.stride < std::max(h, w)) CHECK(enumerate_count(h, w, 15, g.stride + 1) < b);
  }
}

TEST_CASE("nonlocal search on a constant image follows scan order") {
  const Tensor flat({30, 30}, 7.0);
  const Rect crop{0, 0, 30, 30};
  const auto found = nonlocal_search(flat, crop, {5, 5}, 5, 5);
  REQUIRE(found.size() == 5u);
  CHECK(found[0] == Location{5, 5});
  CHECK(found[1] == Location{0, 0});
  CHECK(found[2] == Location{0, 1});
  CHECK(found[4] == Location{0, 3});
}

TEST_CASE("nonlocal search finds a planted duplicate") {
  std::mt19937_64 rng(2);
  Tensor image = testing::random_tensor(rng, {30, 30}, 0.0, 255.0);
  for (Index y = 0; y < 6; ++y)
    for (Index x = 0; x < 6; ++x) image(20 + y, 17 + x) = image(3 + y, 4 + x);
  const auto found = nonlocal_search(image, {0, 0, 30, 30}, {3, 4}, 6, 3);
  CHECK(found[1] == Location{20, 17});
  CHECK(window_ssd(image, found[0], found[1], 6) == 0.0);
}

TEST_CASE("nonlocal search matches the exhaustive oracle") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<Index> pos(0, 10);
  for (int n = 0; n < 20; ++n) {
    // Coarse pixel values make SSD ties common.
    Tensor image({24, 26});
    std::uniform_int_distribution<int> level(0, 2);
    for (double& v : image.values()) v = level(rng);
    const Rect crop{2, 1, 20, 22};
    const Location anchor{crop.top + pos(rng), crop.left + pos(rng)};
    CHECK(nonlocal_search(image, crop, anchor, 4, 6) == exhaustive_search(image, crop, anchor, 4, 6));
  }
  CHECK_THROWS_AS(nonlocal_search(Tensor({6, 6}), {0, 0, 6, 6}, {0, 0}, 5, 5), DataError);
  CHECK(nonlocal_search(Tensor({6, 6}), {0, 0, 6, 6}, {1, 1}, 5, 1) == std::vector<Location>{{1, 1}});
}

TEST_CASE("training set construction") {
  std::mt19937_64 rng(4);
  std::vector<ImagePair> pairs;
  for (int i = 0; i < 2; ++i) {
    ImagePair p{"p" + std::to_string(i), integer_image(rng, 40, 50), integer_image(rng, 40, 50), {2, 3, 35, 45}};
    pairs.push_back(std::move(p));
  }
  const DatasetConfig config{6, 20, 3};
  const TrainingSet set = build_training_set(pairs, config);
  CHECK(set.tuples.size() == 40u);
  CHECK(set.strides.size() == 2u);
  const PatchTuple& t = set.tuples[21];
  CHECK(t.size() == 3u);
  // Tuples come from the high-SNR search and window both images at the same coordinates.
  CHECK(t.locations == nonlocal_search(pairs[1].high_snr, pairs[1].crop, t.locations[0], 6, 3));
  CHECK(t.noisy[2] == window(pairs[1].noisy, t.locations[2], 6));
  CHECK(t.clean[2] == window(pairs[1].high_snr, t.locations[2], 6));

  const TrainingSet again = build_training_set(pairs, config);
  CHECK(again.tuples[17].locations == set.tuples[17].locations);

  const TrainingSet single = build_training_set(pairs, {6, 20, 1});
  CHECK(single.tuples[3].size() == 1u);
  CHECK(single.tuples[3].locations[0] == set.tuples[3].locations[0]);

  CHECK_THROWS_AS(build_training_set({}, config), DataError);
}

TEST_CASE("patch archive round trip") {
  std::mt19937_64 rng(5);
  std::vector<ImagePair> pairs{{"a", integer_image(rng, 30, 30), integer_image(rng, 30, 30), {0, 0, 30, 30}}};
  const TrainingSet set = build_training_set(pairs, {5, 9, 2});
  std::ostringstream os;
  write_patch_archive(os, set.tuples, 5);
  std::istringstream is(os.str());
  const auto back = read_patch_archive(is);
  REQUIRE(back.size() == set.tuples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].locations == set.tuples[i].locations);
    CHECK(back[i].noisy == set.tuples[i].noisy);
    CHECK(back[i].clean == set.tuples[i].clean);
  }
  std::istringstream cut(os.str().substr(0, os.str().size() - 3));
  CHECK_THROWS_AS(read_patch_archive(cut), DataError);
}

TEST_CASE("training pairs and crop sidecar") {
  testing::TempDir dir("pairs");
  std::mt19937_64 rng(6);
  write_image(dir / "noisy/a.pgm", integer_image(rng, 20, 30));
  write_image(dir / "ref/a.pgm", integer_image(rng, 20, 30));
  testing::write_text(dir / "crops.txt", "# file top left h w\na.pgm 1 2 15 20\n");
  const auto pairs = load_training_pairs(dir.path(), dir / "crops.txt");
  REQUIRE(pairs.size() == 1u);
  CHECK(pairs[0].crop == Rect{1, 2, 15, 20});

  testing::write_text(dir / "big.txt", "a.pgm 10 2 15 20\n");
  CHECK_THROWS_AS(load_training_pairs(dir.path(), dir / "big.txt"), DataError);
  testing::write_text(dir / "missing.txt", "b.pgm 0 0 5 5\n");
  CHECK_THROWS_AS(load_training_pairs(dir.path(), dir / "missing.txt"), DataError);
  testing::write_text(dir / "empty.txt", "# nothing\n");
  CHECK_THROWS_AS(read_crop_file(dir / "empty.txt"), DataError);
  CHECK_THROWS_AS(load_training_pairs(dir / "noisy", dir / "crops.txt"), DataError);
}

TEST_CASE("test case directories") {
  testing::TempDir dir("cases");
  std::mt19937_64 rng(7);
  const auto make_case = [&](const std::string& name, int nearby) {
    for (const std::string& stem : {std::string("main"), std::string("ref")})
      write_image(dir / (name + "/" + stem + ".pgm"), integer_image(rng, 8, 9));
    for (int i = 1; i <= nearby; ++i)
      write_image(dir / (name + "/near" + std::to_string(i) + ".pgm"), integer_image(rng, 8, 9));
  };
  make_case("b", 4);
  make_case("a", 3);

  const TestCase tc = load_test_case(dir / "b", 5);
  CHECK(tc.nearby.size() == 4u);
  CHECK(tc.inputs().size() == 5u);
  CHECK(tc.inputs()[0] == tc.main);

  try {
    load_test_case(dir / "a", 5);
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("use T=4") != std::string::npos);
  }
  std::filesystem::remove(dir / "a/ref.pgm");
  try {
    load_test_case(dir / "a", 4);
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("ref") != std::string::npos);
    CHECK(std::string(e.what()).find("near3.pgm") != std::string::npos);
  }
  write_image(dir / "a/ref.pgm", integer_image(rng, 8, 10));
  CHECK_THROWS_AS(load_test_case(dir / "a", 4), DataError);

  const auto cases = find_test_cases(dir.path());
  REQUIRE(cases.size() == 2u);
  CHECK(cases[0].filename() == "a");
  CHECK(find_test_cases(dir / "b") == std::vector<std::filesystem::path>{dir / "b"});
  testing::TempDir empty("empty");
  CHECK_THROWS_AS(find_test_cases(empty.path()), DataError);
}

TEST_CASE("ROI files") {
  testing::TempDir dir("roi");
  testing::write_text(dir / "ok.roi", "background 0 0 10 10\nlayer1 20 0 5 5\nlayer2 30 0 5 5\n");
  const RoiSpec spec = read_roi_file(dir / "ok.roi");
  CHECK(spec.background == Rect{0, 0, 10, 10});
  CHECK(spec.foreground.size() == 2u);
  CHECK_NOTHROW(spec.check(40, 10));
  CHECK_THROWS_AS(spec.check(34, 10), PreconditionError);

  testing::write_text(dir / "two.roi", "background 0 0 10 10\nbackground 20 0 5 5\nx 30 0 1 1\n");
  CHECK_THROWS_AS(read_roi_file(dir / "two.roi"), DataError);
  testing::write_text(dir / "none.roi", "x 30 0 1 1\n");
  CHECK_THROWS_AS(read_roi_file(dir / "none.roi"), DataError);
  testing::write_text(dir / "bad.roi", "background 0 0 10\n");
  CHECK_THROWS_AS(read_roi_file(dir / "bad.roi"), DataError);
}
