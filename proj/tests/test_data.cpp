#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "hvq/data.hpp"
#include "hvq/png_io.hpp"
#include "test_util.hpp"

using namespace hvq;
using namespace hvq::testutil;
namespace fs = std::filesystem;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.classes = 3;
  s.per_class = 6;
  s.test_normal = 3;
  s.test_anomalous = 3;
  s.height = 64;
  s.width = 64;
  s.seed = 77;
  return s;
}

std::string digest_tree(const fs::path& root) {
  // order-stable concatenation of relative paths and file bytes
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) {
    all += fs::relative(f, root).string();
    std::ifstream in(f, std::ios::binary);
    all.append(std::istreambuf_iterator<char>(in), {});
  }
  // cheap fnv1a over the concatenation
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : all) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return std::to_string(h) + ":" + std::to_string(all.size());
}

}  // namespace

TEST_CASE("gen_synthetic: counts and split hygiene") {
  SyntheticSpec s;
  s.classes = 3;
  s.per_class = 200;
  s.test_normal = 50;
  s.test_anomalous = 50;
  s.height = 32;  // keep the big-count case cheap
  s.width = 32;
  Dataset ds = gen_synthetic(s);
  CHECK(ds.train.size() == 600);
  CHECK(ds.test.size() == 300);
  CHECK(ds.train.size() + ds.test.size() == 900);
  for (const auto& t : ds.train) {
    CHECK(t.is_anomalous == 0);
    CHECK_FALSE(t.has_mask());
  }
}

TEST_CASE("gen_synthetic: needs at least two classes") {
  SyntheticSpec s = small_spec();
  s.classes = 1;
  CHECK_THROWS_AS(gen_synthetic(s), ConfigError);
}

TEST_CASE("gen_synthetic: anomaly area fraction in [1%, 10%], masks consistent") {
  Dataset ds = gen_synthetic(small_spec());
  int anomalous = 0;
  for (const auto& t : ds.test) {
    if (!t.is_anomalous) {
      CHECK_FALSE(t.has_mask());
      continue;
    }
    ++anomalous;
    REQUIRE(t.has_mask());
    const double frac = t.mask().sum() / (64.0 * 64.0);
    CHECK(frac >= 0.01);
    CHECK(frac <= 0.10);
  }
  CHECK(anomalous == 9);
}

TEST_CASE("gen_synthetic: deterministic for a fixed seed") {
  Dataset a = gen_synthetic(small_spec());
  Dataset b = gen_synthetic(small_spec());
  REQUIRE(a.train.size() == b.train.size());
  for (size_t i = 0; i < a.train.size(); ++i)
    CHECK(a.train[i].rgb == b.train[i].rgb);
  for (size_t i = 0; i < a.test.size(); ++i) {
    CHECK(a.test[i].rgb == b.test[i].rgb);
    CHECK(a.test[i].mask_bits == b.test[i].mask_bits);
  }
}

TEST_CASE("gen_synthetic: classes separable by nearest class mean on mean tokens") {
  SyntheticSpec s = small_spec();
  s.per_class = 12;
  s.test_normal = 8;
  Dataset ds = gen_synthetic(s);
  BackboneStub stub = BackboneStub::make(32, 16, 123);

  std::vector<Vec> means(3, Vec::Zero(32));
  std::vector<int> counts(3, 0);
  for (const auto& t : ds.train) {
    means[static_cast<size_t>(t.class_id)] +=
        stub.extract(t.image()).colwise().mean().transpose();
    counts[static_cast<size_t>(t.class_id)]++;
  }
  for (int c = 0; c < 3; ++c) means[static_cast<size_t>(c)] /= counts[static_cast<size_t>(c)];

  int correct = 0, total = 0;
  for (const auto& t : ds.test) {
    if (t.is_anomalous) continue;
    Vec m = stub.extract(t.image()).colwise().mean().transpose();
    int best = 0;
    double bd = 1e300;
    for (int c = 0; c < 3; ++c) {
      const double d = (m - means[static_cast<size_t>(c)]).squaredNorm();
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    correct += best == t.class_id;
    ++total;
  }
  CHECK(static_cast<double>(correct) / total >= 0.95);
}

TEST_CASE("backbone stub: 224 input gives 196 tokens; zero image gives bias response") {
  BackboneStub stub = BackboneStub::make(64, 16, 9001);
  Image img(224, 224);
  Mat tokens = stub.extract(img);
  CHECK(tokens.rows() == 196);
  CHECK(tokens.cols() == 64);
  Vec expect = stub.zero_response();
  for (int i = 0; i < tokens.rows(); ++i)
    CHECK((tokens.row(i).transpose() - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backbone stub: indivisible dims are an input error") {
  BackboneStub stub = BackboneStub::make(8, 16, 1);
  Image img(100, 96);
  CHECK_THROWS_AS(stub.extract(img), InputError);
}

TEST_CASE("backbone stub: 16-pixel shift moves tokens one grid cell") {
  BackboneStub stub = BackboneStub::make(16, 16, 5);
  const int hw = 96;
  Image img(hw, hw);
  Rng rng(81);
  for (int r = 0; r < hw; ++r)
    for (int c = 0; c < hw; ++c) {
      const double v = 0.5 + 0.4 * std::sin(0.3 * r) * std::cos(0.2 * c);
      img.chan[0](r, c) = v;
      img.chan[1](r, c) = 1.0 - v;
      img.chan[2](r, c) = 0.3 + 0.01 * rng.uniform();
    }
  Image shifted(hw, hw);
  for (int ch = 0; ch < 3; ++ch) {
    for (int r = 0; r < hw; ++r)
      for (int c = 0; c < hw; ++c)
        shifted.chan[ch](r, c) =
            c >= 16 ? img.chan[ch](r, c - 16) : img.chan[ch](r, c);
  }
  Mat base = stub.extract(img);
  Mat moved = stub.extract(shifted);
  const int gw = 6;
  for (int gy = 0; gy < 6; ++gy)
    for (int gx = 1; gx < gw; ++gx)
      CHECK((moved.row(gy * gw + gx) - base.row(gy * gw + gx - 1))
                .cwiseAbs()
                .maxCoeff() < 1e-12);
}

TEST_CASE("mvtec round trip: layout rules, masks, determinism") {
  const fs::path root = fs::temp_directory_path() / "hvq_test_corpus";
  fs::remove_all(root);
  Dataset ds = gen_synthetic(small_spec());
  write_mvtec_style(ds, root.string());

  CHECK(fs::exists(root / "class00" / "train" / "good" / "000.png"));
  CHECK(fs::exists(root / "class01" / "test" / "good" / "000.png"));

  Dataset back = load_mvtec_style(root.string(), 64);
  CHECK(back.num_classes() == 3);
  CHECK(back.train.size() == ds.train.size());
  CHECK(back.test.size() == ds.test.size());
  for (const auto& t : back.train) CHECK(t.is_anomalous == 0);

  int anomalous = 0;
  for (const auto& t : back.test) {
    if (t.defect_kind == "good") {
      CHECK(t.is_anomalous == 0);
      CHECK_FALSE(t.has_mask());
    } else {
      CHECK(t.is_anomalous == 1);
      REQUIRE(t.has_mask());
      CHECK(t.mask().sum() > 0);
      ++anomalous;
    }
  }
  CHECK(anomalous == 9);

  // PNG quantization makes write -> load -> write a fixed point
  const fs::path root2 = fs::temp_directory_path() / "hvq_test_corpus2";
  fs::remove_all(root2);
  write_mvtec_style(back, root2.string());
  CHECK(digest_tree(root) == digest_tree(root2));

  fs::remove_all(root);
  fs::remove_all(root2);
}

TEST_CASE("mvtec load: missing ground truth excludes sample from pixel metrics") {
  const fs::path root = fs::temp_directory_path() / "hvq_test_missing_mask";
  fs::remove_all(root);
  SyntheticSpec s = small_spec();
  s.classes = 2;
  s.per_class = 2;
  s.test_normal = 1;
  s.test_anomalous = 2;
  Dataset ds = gen_synthetic(s);
  write_mvtec_style(ds, root.string());

  // drop one mask file
  bool removed = false;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!removed && e.is_regular_file() &&
        e.path().string().find("ground_truth") != std::string::npos) {
      fs::remove(e.path());
      removed = true;
    }
  }
  REQUIRE(removed);
  Dataset back = load_mvtec_style(root.string(), 64);
  int missing = 0;
  for (const auto& t : back.test)
    if (t.is_anomalous && t.mask_missing) ++missing;
  CHECK(missing == 1);
  fs::remove_all(root);
}

TEST_CASE("png round trip preserves 8-bit pixels exactly") {
  Rng rng(82);
  Image img(24, 16);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < 24; ++r)
      for (int c = 0; c < 16; ++c) img.chan[ch](r, c) = rng.uniform();
  const std::string path =
      (fs::temp_directory_path() / "hvq_test_rt.png").string();
  save_png(path, img);
  Image back = load_png(path);
  REQUIRE(back.height == 24);
  REQUIRE(back.width == 16);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < 24; ++r)
      for (int c = 0; c < 16; ++c) {
        const double q = std::round(img.chan[ch](r, c) * 255.0) / 255.0;
        CHECK(back.chan[ch](r, c) == doctest::Approx(q).epsilon(1e-9));
      }
  fs::remove(path);
}
