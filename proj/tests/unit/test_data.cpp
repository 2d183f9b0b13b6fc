#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "pipnet/data/artifact.hpp"
#include "pipnet/data/dataset.hpp"
#include "pipnet/data/image_io.hpp"
#include "pipnet/data/synthetic.hpp"
#include "pipnet/error.hpp"

using namespace pipnet;
using namespace pipnet::data;
using pipnet::testing::random_image;
using pipnet::testing::TempDir;

namespace {

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<DatasetItem> items_with_studies(const std::vector<std::string>& studies) {
  std::vector<DatasetItem> items;
  for (std::size_t i = 0; i < studies.size(); ++i) {
    DatasetItem item;
    item.relpath = "x/" + std::to_string(i);
    item.study_id = studies[i];
    items.push_back(item);
  }
  return items;
}

SyntheticSpec small_spec(double confound_rate = 0.5, std::uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.train_count = 60;
  spec.test_count = 20;
  spec.confound_rate = confound_rate;
  spec.seed = seed;
  return spec;
}

std::size_t count_class(const std::vector<DatasetItem>& items, std::size_t label) {
  std::size_t n = 0;
  for (const auto& item : items) n += item.label == label;
  return n;
}

}  // namespace

TEST_CASE("png: gray and RGB round trips are lossless") {
  std::mt19937_64 rng(1);
  for (std::size_t channels : {1u, 3u}) {
    const Image image = random_image(17, rng, channels);
    CHECK(decode_png(encode_png(image)) == image);
  }
  CHECK_THROWS_AS(decode_png({1, 2, 3}), IoError);
}

TEST_CASE("insert_artifact: worked examples") {
  const Image black(64, 64, 3, 0);
  ArtifactPlacement red{0, 0, 16, {255, 0, 0}};
  const auto result = insert_artifact(black, red);
  std::size_t red_pixels = 0;
  for (std::size_t r = 0; r < 64; ++r)
    for (std::size_t c = 0; c < 64; ++c)
      red_pixels += result.image.at(r, c, 0) == 255 && result.image.at(r, c, 1) == 0 && result.image.at(r, c, 2) == 0;
  CHECK(red_pixels == 256);
  CHECK(mask_area(result.mask) == 256);

  const auto none = insert_artifact(black, ArtifactPlacement{5, 5, 0, {255, 0, 0}});
  CHECK(none.image == black);
  CHECK(mask_area(none.mask) == 0);

  CHECK_THROWS_AS(insert_artifact(black, ArtifactPlacement{60, 0, 8, {1, 2, 3}}), InvalidArgument);
}

TEST_CASE("insert_artifact: pixels outside the mask are untouched, mask equals changed set") {
  std::mt19937_64 rng(2);
  ArtifactDescriptor descriptor;
  for (std::uint64_t draw = 0; draw < 8; ++draw) {
    const Image image = random_image(64, rng);
    const auto placement = place_artifact(descriptor, 64, draw);
    const auto result = insert_artifact(image, placement);
    for (std::size_t r = 0; r < 64; ++r)
      for (std::size_t c = 0; c < 64; ++c) {
        const bool masked = result.mask.at(r, c, 0) != 0;
        CHECK((result.mask.at(r, c, 0) == 0 || result.mask.at(r, c, 0) == 255));
        for (std::size_t ch = 0; ch < 3; ++ch) {
          if (masked) CHECK(result.image.at(r, c, ch) == descriptor.color[ch]);
          else CHECK(result.image.at(r, c, ch) == image.at(r, c, ch));
        }
      }
    CHECK(mask_area(result.mask) == 16 * 16);
  }
}

TEST_CASE("place_artifact: corners, margin and fit") {
  ArtifactDescriptor d;
  d.corner = Corner::TopLeft;
  auto p = place_artifact(d, 64, 0);
  CHECK(p.row == 2);
  CHECK(p.col == 2);
  CHECK(p.size == 16);
  d.corner = Corner::BottomRight;
  p = place_artifact(d, 64, 0);
  CHECK(p.row == 46);
  CHECK(p.col == 46);
  d.corner = Corner::Random;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::uint64_t draw = 0; draw < 4; ++draw) {
    const auto q = place_artifact(d, 64, draw);
    seen.insert({q.row, q.col});
  }
  CHECK(seen.size() == 4);
  d.size_fraction = 1.0;
  CHECK_THROWS_AS(place_artifact(d, 64, 0), InvalidArgument);
  CHECK(corner_from_string("bottom_left") == Corner::BottomLeft);
  CHECK_THROWS_AS(corner_from_string("middle"), InvalidArgument);
}

TEST_CASE("split_by_study: degenerate inputs") {
  auto one = items_with_studies({"a", "a", "a"});
  CHECK_THROWS_AS(split_by_study(one, 0.5, 1), InvalidArgument);
  auto unnamed = items_with_studies({"a", ""});
  CHECK_THROWS_AS(split_by_study(unnamed, 0.5, 1), InvalidArgument);
  auto two = items_with_studies({"a", "b"});
  CHECK_THROWS_AS(split_by_study(two, 0.0, 1), InvalidArgument);
  CHECK_THROWS_AS(split_by_study(two, 1.0, 1), InvalidArgument);
}

TEST_CASE("split_by_study: one image per study is a per-image split") {
  std::vector<std::string> ids;
  for (int i = 0; i < 50; ++i) ids.push_back("s" + std::to_string(i));
  auto items = items_with_studies(ids);
  const auto split = split_by_study(items, 0.2, 9);
  CHECK(split.test_ids.size() == 10);
  CHECK(split.train_ids.size() == 40);
  CHECK(split.seed == 9);
  CHECK(split.fraction == 0.2);
}

TEST_CASE("split_by_study: random multi-image studies never straddle the split") {
  std::mt19937_64 rng(13);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::vector<std::string> ids;
    const std::size_t studies = 2 + rng() % 40;
    for (std::size_t s = 0; s < studies; ++s)
      for (std::size_t k = 0, n = 1 + rng() % 4; k < n; ++k) ids.push_back("st" + std::to_string(s));
    std::shuffle(ids.begin(), ids.end(), rng);
    auto items = items_with_studies(ids);
    const double fraction = 0.1 + 0.8 * double(rng() % 100) / 100.0;
    const auto split = split_by_study(items, fraction, seed);
    std::set<std::string> train, test;
    for (auto i : split.train_ids) train.insert(items[i].study_id);
    for (auto i : split.test_ids) test.insert(items[i].study_id);
    for (const auto& s : test) CHECK(train.count(s) == 0);
    CHECK(split.train_ids.size() + split.test_ids.size() == items.size());
    const auto expected = std::clamp<long>(std::lround(fraction * double(studies)), 1, long(studies) - 1);
    CHECK(long(test.size()) == expected);
  }
}

TEST_CASE("manifest: format/parse round trip and malformed lines") {
  std::vector<ManifestEntry> entries{{"train/1/s00001_0.png", 1, "s00001", true},
                                     {"test/0/s00002_1.png", 0, "s00002", false}};
  const auto text = format_manifest(entries);
  CHECK(text == "train/1/s00001_0.png,1,s00001,1\ntest/0/s00002_1.png,0,s00002,0\n");
  CHECK(parse_manifest(text) == entries);
  CHECK_THROWS_AS(parse_manifest("a,1,s\n"), IoError);
  CHECK_THROWS_AS(parse_manifest("a,x,s,0\n"), InvalidArgument);
}

TEST_CASE("synthetic spec: validation and config keys") {
  SyntheticSpec spec;
  CHECK_NOTHROW(spec.validate());
  auto bad = spec;
  bad.confound_rate = 1.5;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = spec;
  bad.artifact.size_fraction = 0.99;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = spec;
  bad.test_count = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);

  SyntheticSpec back;
  back.apply(small_spec(0.3, 77).to_kv());
  CHECK(back.to_kv().to_string() == small_spec(0.3, 77).to_kv().to_string());
  KeyValueConfig kv;
  kv.set("data.colour", "1");
  CHECK_THROWS_AS(back.apply(kv), InvalidArgument);
}

TEST_CASE("generate: confound count is exact, artifacts only where intended") {
  for (double rate : {0.0, 0.25, 0.5, 1.0}) {
    const auto ds = generate_items(small_spec(rate));
    std::size_t class1 = 0, artifacted = 0;
    for (const auto& item : ds.train) {
      if (item.label == 1) ++class1;
      if (item.has_artifact()) {
        ++artifacted;
        CHECK(item.label == 1);
        CHECK(mask_area(*item.mask) == 16 * 16);
      }
    }
    CHECK(artifacted == std::size_t(std::lround(rate * double(class1))));
    for (const auto& item : ds.test) CHECK(!item.has_artifact());
    CHECK(ds.counterfactual.size() == count_class(ds.test, 0));
    for (const auto& item : ds.counterfactual) {
      CHECK(item.label == 0);
      REQUIRE(item.has_artifact());
      CHECK(mask_area(*item.mask) == 16 * 16);
    }
  }
}

TEST_CASE("generate: counterfactual images differ from their clean source only under the mask") {
  const auto ds = generate_items(small_spec());
  std::map<std::string, const DatasetItem*> clean;
  for (const auto& item : ds.test) clean[item.relpath.substr(std::string("test").size())] = &item;
  REQUIRE(!ds.counterfactual.empty());
  for (const auto& cf : ds.counterfactual) {
    const auto* src = clean.at(cf.relpath.substr(std::string("counterfactual").size()));
    for (std::size_t r = 0; r < 64; ++r)
      for (std::size_t c = 0; c < 64; ++c)
        if (cf.mask->at(r, c, 0) == 0)
          for (std::size_t ch = 0; ch < 3; ++ch) CHECK(cf.image.at(r, c, ch) == src->image.at(r, c, ch));
  }
}

TEST_CASE("generate: studies, labels and layout") {
  const auto ds = generate_items(small_spec());
  CHECK(count_class(ds.train, 0) > 0);
  CHECK(count_class(ds.train, 1) > 0);
  std::set<std::string> train_studies, test_studies;
  std::map<std::string, std::size_t> study_label;
  for (const auto* split : {&ds.train, &ds.test})
    for (const auto& item : *split) {
      auto [it, fresh] = study_label.emplace(item.study_id, item.label);
      CHECK(it->second == item.label);
      (split == &ds.train ? train_studies : test_studies).insert(item.study_id);
      const std::string prefix = (split == &ds.train ? "train/" : "test/") + std::to_string(item.label) + "/" +
                                 item.study_id + "_";
      CHECK(item.relpath.rfind(prefix, 0) == 0);
      CHECK(item.image.height == 64);
      CHECK(item.image.channels == 3);
    }
  for (const auto& s : test_studies) CHECK(train_studies.count(s) == 0);
  CHECK(ds.train.size() + ds.test.size() == 80);
}

TEST_CASE("generate: pure function of its settings, bit-identical files") {
  TempDir dir;
  const auto spec = small_spec(0.5, 11);
  generate(spec, dir / "a");
  generate(spec, dir / "b");
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), dir / "a");
    CHECK(read_bytes(entry.path()) == read_bytes(dir / "b" / rel));
    ++files;
  }
  CHECK(files > 80);
  CHECK(generate_items(spec).train[3].image != generate_items(small_spec(0.5, 12)).train[3].image);
}

TEST_CASE("load_dataset: matches the generated items") {
  TempDir dir;
  const auto spec = small_spec(0.5, 5);
  const auto made = generate(spec, dir / "ds");
  const auto loaded = load_dataset(dir / "ds");
  CHECK(loaded.num_classes == 2);
  REQUIRE(loaded.train.size() == made.train.size());
  REQUIRE(loaded.test.size() == made.test.size());
  REQUIRE(loaded.counterfactual.size() == made.counterfactual.size());
  for (std::size_t i = 0; i < made.train.size(); ++i) {
    CHECK(loaded.train[i].relpath == made.train[i].relpath);
    CHECK(loaded.train[i].image == made.train[i].image);
    CHECK(loaded.train[i].has_artifact() == made.train[i].has_artifact());
    if (made.train[i].mask) CHECK(*loaded.train[i].mask == *made.train[i].mask);
  }
  CHECK(&loaded.split("test") == &loaded.test);
  CHECK_THROWS_AS(loaded.split("val"), InvalidArgument);
  CHECK_THROWS_AS(load_dataset(dir / "missing"), IoError);
}

TEST_CASE("render_lesion: classes differ in boundary roughness") {
  // Angle-to-angle change of the boundary radius: blobs turn sharply, the
  // disc's slow elliptical wobble barely changes between neighbouring bins.
  SyntheticSpec spec;
  spec.noise_std = 0.0;
  auto roughness = [&](std::size_t label, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Image image = render_lesion(label, spec, rng);
    double cy = 0, cx = 0, n = 0;
    std::vector<std::pair<double, double>> dark;
    for (std::size_t r = 0; r < 64; ++r)
      for (std::size_t c = 0; c < 64; ++c)
        if (image.at(r, c, 0) < 150) {
          dark.push_back({double(r), double(c)});
          cy += r;
          cx += c;
          n += 1;
        }
    cy /= n;
    cx /= n;
    std::vector<double> radius(36, 0.0);
    for (auto [r, c] : dark) {
      const double angle = std::atan2(r - cy, c - cx) + M_PI;
      auto bin = std::min<std::size_t>(35, std::size_t(angle / (2 * M_PI) * 36));
      radius[bin] = std::max(radius[bin], std::hypot(r - cy, c - cx));
    }
    double mean = 0, step = 0;
    for (std::size_t b = 0; b < 36; ++b) {
      mean += radius[b] / 36;
      const double d = radius[(b + 1) % 36] - radius[b];
      step += d * d / 36;
    }
    return std::sqrt(step) / mean;
  };
  double blob = 0, disc = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    blob += roughness(0, s) / 20;
    disc += roughness(1, s) / 20;
  }
  CHECK(blob > 2.0 * disc);
}
