#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "bsl/binary_io.hpp"
#include "bsl/errors.hpp"
#include "bsl/synthscan.hpp"

namespace fs = std::filesystem;
using namespace bsl;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bsl_synth_" + name);
  fs::remove_all(p);
  return p;
}

GeneratorParams small_params() {
  GeneratorParams p;
  p.frames = 24;
  p.height = 16;
  p.width = 20;
  return p;
}

}  // namespace

TEST(Generator, Deterministic) {
  EXPECT_EQ(generate_scan(5, small_params()), generate_scan(5, small_params()));
  EXPECT_NE(generate_scan(5, small_params()).frames, generate_scan(6, small_params()).frames);
}

TEST(Generator, StandardPlaneIsQualityArgmax) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scan s = generate_scan(seed, GeneratorParams{});
    const auto best = *std::max_element(s.quality.begin(), s.quality.end());
    EXPECT_EQ(s.quality[s.t_sp], best);
    EXPECT_GE(s.t_sp, 2 * s.num_frames / 3 - 1);
    EXPECT_LT(s.t_sp, s.num_frames);
  }
}

TEST(Generator, RangesAndVisibility) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scan s = generate_scan(seed, GeneratorParams{});
    ASSERT_EQ(s.frames.size(), std::size_t{s.num_frames} * s.height * s.width);
    ASSERT_EQ(s.masks.size(), s.frames.size() * kNumLandmarks);
    for (float v : s.frames) ASSERT_TRUE(v >= 0 && v <= 1);
    for (auto m : s.masks) ASSERT_LE(m, 1);
    for (std::uint32_t t = 0; t < s.num_frames; ++t) {
      const float q = s.quality[t];
      ASSERT_TRUE(q >= 0 && q <= 1);
      EXPECT_EQ(s.mask_empty(t, kHeadCircumference), !(q > kHcThreshold)) << "t=" << t;
      EXPECT_EQ(s.mask_empty(t, kCavumSepti), !(q > kCspThreshold)) << "t=" << t;
      EXPECT_EQ(s.mask_empty(t, kLateralVentricle), !(q > kLvThreshold)) << "t=" << t;
    }
  }
}

TEST(Generator, ConstantQualityExtremes) {
  GeneratorParams p = small_params();
  p.profile.kind = QualityProfile::Kind::kConstant;
  p.profile.constant = 1;
  const Scan full = generate_scan(3, p);
  for (std::uint32_t t = 0; t < full.num_frames; ++t) {
    for (std::size_t l = 0; l < kNumLandmarks; ++l) EXPECT_FALSE(full.mask_empty(t, l));
  }
  // No jitter and no noise: every frame is identical.
  for (std::uint32_t t = 1; t < full.num_frames; ++t) {
    EXPECT_TRUE(std::equal(full.frame(t).begin(), full.frame(t).end(), full.frame(0).begin()));
  }
  p.profile.constant = 0;
  const Scan none = generate_scan(3, p);
  for (auto m : none.masks) ASSERT_EQ(m, 0);
}

TEST(Generator, SkillRaisesQuality) {
  GeneratorParams lo = GeneratorParams{}, hi = GeneratorParams{};
  lo.profile.skill_level = 0.05f;
  hi.profile.skill_level = 0.95f;
  double ql = 0, qh = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (float q : generate_scan(seed, lo).quality) ql += q;
    for (float q : generate_scan(seed, hi).quality) qh += q;
  }
  EXPECT_GT(qh, ql * 1.2);
}

TEST(Generator, InvalidParams) {
  GeneratorParams p;
  p.fps = 0;
  EXPECT_THROW(generate_scan(1, p), ConfigError);
  p = GeneratorParams{};
  p.profile.kind = QualityProfile::Kind::kConstant;
  p.profile.constant = 2;
  EXPECT_THROW(generate_scan(1, p), ConfigError);
}

TEST(ScanFormat, RoundTripAndHeader) {
  const fs::path dir = temp_dir("roundtrip");
  fs::create_directories(dir);
  Scan s = generate_scan(9, small_params());
  s.subject_id = 77;
  s.sonographer_id = 4;
  write_scan(s, dir / "a.bscan");
  EXPECT_EQ(read_scan(dir / "a.bscan"), s);
  const ScanHeader h = read_scan_header(dir / "a.bscan");
  EXPECT_EQ(h.num_frames, s.num_frames);
  EXPECT_EQ(h.width, s.width);
  EXPECT_EQ(h.t_sp, s.t_sp);
  EXPECT_EQ(h.subject_id, 77u);
  EXPECT_EQ(h.years_experience, s.years_experience);
}

TEST(ScanFormat, MaskBitsAreLsbFirstRowPadded) {
  Scan s = generate_scan(2, small_params());
  const auto bytes = encode_scan(s);
  const std::size_t header = 8 + 2 + 4 + 2 + 2 + 1 + 4 + 4 + 4 + 4 + 4;
  const std::size_t frames_bytes = s.frames.size() * 4;
  const std::size_t row_bytes = (s.width + 7) / 8;
  const std::size_t plane_bytes = row_bytes * s.height;
  ASSERT_EQ(bytes.size(), header + frames_bytes + plane_bytes * s.num_frames * kNumLandmarks + s.num_frames * 4 + 8);
  for (std::uint32_t t = 0; t < s.num_frames; t += 5) {
    for (std::size_t l = 0; l < kNumLandmarks; ++l) {
      const auto m = s.mask(t, l);
      const std::uint8_t* plane = bytes.data() + header + frames_bytes + (t * kNumLandmarks + l) * plane_bytes;
      for (std::size_t y = 0; y < s.height; ++y) {
        for (std::size_t x = 0; x < s.width; ++x) {
          const int bit = (plane[y * row_bytes + x / 8] >> (x % 8)) & 1;
          ASSERT_EQ(bit, m[y * s.width + x]);
        }
      }
    }
  }
  const auto stored = io::Reader(std::span(bytes).subspan(bytes.size() - 8)).get<std::uint64_t>();
  EXPECT_EQ(stored, io::fnv1a64(std::span(bytes).first(bytes.size() - 8)));
}

TEST(ScanFormat, DistinctErrors) {
  const auto good = encode_scan(generate_scan(1, small_params()));
  auto bad = good;
  bad[0] = 'Z';
  EXPECT_THROW(decode_scan(bad), BadMagicError);
  bad = good;
  bad[8] = 2;  // version
  EXPECT_THROW(decode_scan(bad), VersionMismatchError);
  bad.assign(good.begin(), good.begin() + 100);
  EXPECT_THROW(decode_scan(bad), TruncatedError);
  bad = good;
  bad[60] ^= 1;
  EXPECT_THROW(decode_scan(bad), ChecksumError);
  bad = good;
  bad.push_back(0);
  EXPECT_THROW(decode_scan(bad), FormatError);
}

TEST(Sequences, SampleFitsAndIsUniformish) {
  const Scan s = generate_scan(4, small_params());
  std::set<std::uint32_t> starts;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    const auto smp = sample_sequence(s, seed, 4, 2);
    ASSERT_LE(smp.start + smp.span(), s.num_frames);
    starts.insert(smp.start);
  }
  EXPECT_EQ(starts.size(), s.num_frames - (2 * 3 + 1) + 1u);
  EXPECT_THROW(sample_sequence(s, 1, 30, 1), ContractError);
}

TEST(Sequences, MakeSequenceStandardizesAndCopiesMasks) {
  const Scan s = generate_scan(4, small_params());
  const SequenceSample smp{0, 3, 4, 2};
  const Sequence seq = make_sequence(s, smp, Split::kSkill);
  ASSERT_EQ(seq.frames.shape(), (Shape{4, 16, 20}));
  ASSERT_EQ(seq.targets.shape(), (Shape{4 * kNumLandmarks, 16, 20}));
  EXPECT_EQ(seq.split, Split::kSkill);
  const std::size_t plane = 16 * 20;
  Real mq = 0;
  for (std::uint32_t j = 0; j < 4; ++j) {
    Real mean = 0;
    for (std::size_t i = 0; i < plane; ++i) mean += seq.frames[j * plane + i];
    EXPECT_NEAR(mean / plane, 0, 1e-9);
    const auto m = s.mask(smp.frame(j), kCavumSepti);
    for (std::size_t i = 0; i < plane; ++i) {
      ASSERT_EQ(seq.targets[(j * kNumLandmarks + kCavumSepti) * plane + i], m[i]);
    }
    mq += s.quality[smp.frame(j)];
  }
  EXPECT_NEAR(seq.mean_quality, mq / 4, 1e-6);
}

TEST(Corpus, DisjointSplitsAndRoundTrip) {
  const fs::path dir = temp_dir("corpus");
  const auto m = make_corpus(11, {5, 4, 3}, small_params(), dir, 2);
  EXPECT_EQ(m.count(Split::kTask), 5u);
  EXPECT_EQ(m.count(Split::kSkill), 4u);
  EXPECT_EQ(m.count(Split::kTest), 3u);
  std::map<std::uint32_t, Split> op_split;
  std::set<std::uint32_t> subjects;
  for (const auto& e : m.entries) {
    auto [it, fresh] = op_split.emplace(e.sonographer_id, e.split);
    if (!fresh) EXPECT_EQ(it->second, e.split);
    EXPECT_TRUE(subjects.insert(e.subject_id).second);
  }
  const Corpus c = load_corpus(dir);
  EXPECT_EQ(c.manifest.entries, m.entries);
  ASSERT_EQ(c.scans.size(), 12u);
  EXPECT_EQ(c.scans[0].subject_id, m.entries[0].subject_id);
  EXPECT_EQ(CorpusManifest::parse(m.to_text()).entries, m.entries);
}

TEST(Corpus, SameSeedSameBytes) {
  const fs::path a = temp_dir("det_a"), b = temp_dir("det_b");
  make_corpus(3, {2, 2, 1}, small_params(), a, 1);
  make_corpus(3, {2, 2, 1}, small_params(), b, 3);
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    EXPECT_EQ(io::read_file(entry.path().string()), io::read_file((b / rel).string())) << rel;
  }
}

TEST(Corpus, ManifestRejectsLeakage) {
  CorpusManifest m;
  m.entries = {{"a", 1, 1, Split::kTask}, {"b", 2, 1, Split::kTest}};
  EXPECT_THROW(m.validate(), ContractError);
  m.entries = {{"a", 1, 1, Split::kTask}, {"b", 1, 2, Split::kSkill}};
  EXPECT_THROW(m.validate(), ContractError);
}

TEST(Corpus, YearsOnlyWeaklyTiedToSkill) {
  // Correlation between skill and drawn years over many operators.
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const double skill = (i + 0.5) / n;
    const double y = draw_years_experience(static_cast<std::uint64_t>(i), static_cast<float>(skill));
    sx += skill;
    sy += y;
    sxx += skill * skill;
    syy += y * y;
    sxy += skill * y;
  }
  const double r = (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
  EXPECT_GT(r, 0.15);
  EXPECT_LT(r, 0.55);
}
