#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bsl/binary_io.hpp"
#include "bsl/checkpoint.hpp"
#include "bsl/errors.hpp"
#include "bsl/optim.hpp"
#include "bsl/param_set.hpp"
#include "bsl/rng.hpp"

namespace fs = std::filesystem;
using namespace bsl;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bsl_tensor_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ParamSet small_params() {
  ParamSet p;
  p.add("a.weight", Tensor({2, 3}, {1, -2, 3, -4, 5, -6}));
  p.add("a.bias", Tensor({2}, {0.5, -0.25}));
  return p;
}

}  // namespace

TEST(Tensor, ShapeAndFill) {
  Tensor t({2, 3, 4}, 1.5);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.dim(1), 3u);
  for (Real v : t.data()) EXPECT_EQ(v, 1.5);
  t.fill(0);
  EXPECT_EQ(t[23], 0);
}

TEST(Tensor, DataSizeMismatchIsShapeError) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<Real>{1, 2, 3}), ShapeError);
}

TEST(Tensor, ItemRequiresSingleElement) {
  EXPECT_EQ(Tensor::scalar(4).item(), 4);
  EXPECT_THROW(Tensor({2}).item(), ShapeError);
}

TEST(Tensor, FiniteCheck) {
  Tensor t({3}, {1, 2, 3});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

TEST(ParamSet, DuplicateNameRejected) {
  ParamSet p = small_params();
  EXPECT_THROW(p.add("a.bias", Tensor({1})), ContractError);
}

TEST(ParamSet, AccumulateChecksShapes) {
  ParamSet p = small_params();
  TensorMap g;
  g.emplace("a.bias", Tensor({3}));
  EXPECT_THROW(p.accumulate_grads(g), ShapeError);
  TensorMap unknown;
  unknown.emplace("nope", Tensor({1}));
  EXPECT_THROW(p.accumulate_grads(unknown), ContractError);
}

TEST(ParamSet, ClipGradNorm) {
  ParamSet p = small_params();
  TensorMap g;
  g.emplace("a.bias", Tensor({2}, {3, 4}));
  p.accumulate_grads(g);
  EXPECT_DOUBLE_EQ(p.grad_norm(), 5);
  EXPECT_DOUBLE_EQ(p.clip_grad_norm(1), 5);
  EXPECT_NEAR(p.grad_norm(), 1, 1e-12);
  EXPECT_NEAR(p.grad("a.bias")[0], 0.6, 1e-12);
}

TEST(Adam, FirstStepMatchesHandComputation) {
  ParamSet p = small_params();
  TensorMap g;
  g.emplace("a.weight", Tensor({2, 3}, {0.1, -0.2, 0.3, 0, 2, -1}));
  p.accumulate_grads(g);
  AdamOptions opt;
  opt.lr = 0.01;
  adam_step(p, opt);
  const std::vector<Real> w0{1, -2, 3, -4, 5, -6}, gw{0.1, -0.2, 0.3, 0, 2, -1};
  for (std::size_t i = 0; i < 6; ++i) {
    const Real m = (1 - opt.beta1) * gw[i], v = (1 - opt.beta2) * gw[i] * gw[i];
    const Real mhat = m / (1 - opt.beta1), vhat = v / (1 - opt.beta2);
    EXPECT_NEAR(p.value("a.weight")[i], w0[i] - opt.lr * mhat / (std::sqrt(vhat) + opt.eps), 1e-15);
  }
  EXPECT_EQ(p.adam().step, 1u);
  EXPECT_FALSE(p.has_grads());
  EXPECT_EQ(p.value("a.bias")[0], 0.5);
}

TEST(Adam, SecondStepBiasCorrection) {
  ParamSet p;
  p.add("x", Tensor({1}, {0}));
  AdamOptions opt;
  opt.lr = 0.1;
  Real m = 0, v = 0, x = 0;
  for (int t = 1; t <= 2; ++t) {
    const Real grad = t == 1 ? 1.0 : -3.0;
    TensorMap g;
    g.emplace("x", Tensor({1}, {grad}));
    p.accumulate_grads(g);
    adam_step(p, opt);
    m = opt.beta1 * m + (1 - opt.beta1) * grad;
    v = opt.beta2 * v + (1 - opt.beta2) * grad * grad;
    x -= opt.lr * (m / (1 - std::pow(opt.beta1, t))) / (std::sqrt(v / (1 - std::pow(opt.beta2, t))) + opt.eps);
  }
  EXPECT_NEAR(p.value("x")[0], x, 1e-14);
}

TEST(Adam, NoGradientsIsStateError) {
  ParamSet p = small_params();
  EXPECT_THROW(adam_step(p, {}), StateError);
}

TEST(Adam, ClipBoundsUpdateInput) {
  ParamSet a, b;
  a.add("x", Tensor({2}, {0, 0}));
  b.add("x", Tensor({2}, {0, 0}));
  TensorMap big, unit;
  big.emplace("x", Tensor({2}, {300, 400}));
  unit.emplace("x", Tensor({2}, {0.6, 0.8}));
  a.accumulate_grads(big);
  b.accumulate_grads(unit);
  AdamOptions clipped;
  clipped.clip_norm = 1;
  adam_step(a, clipped);
  adam_step(b, {});
  EXPECT_NEAR(a.value("x")[0], b.value("x")[0], 1e-15);
  EXPECT_NEAR(a.adam().second_moment.at("x")[1], b.adam().second_moment.at("x")[1], 1e-15);
}

TEST(Checkpoint, RoundTripIsExact) {
  const fs::path dir = temp_dir("roundtrip");
  ParamSet p = small_params();
  TensorMap g;
  g.emplace("a.weight", Tensor({2, 3}, 0.125));
  p.accumulate_grads(g);
  adam_step(p, {});
  save_checkpoint(p, dir / "x.ckpt");
  const ParamSet q = load_checkpoint(dir / "x.ckpt");
  EXPECT_TRUE(p.same_values(q));
  EXPECT_EQ(q.adam().step, 1u);
  EXPECT_EQ(q.adam().first_moment.at("a.weight"), p.adam().first_moment.at("a.weight"));
  EXPECT_EQ(q.adam().second_moment.at("a.weight"), p.adam().second_moment.at("a.weight"));
  EXPECT_FALSE(fs::exists(dir / "x.ckpt.tmp"));
}

TEST(Checkpoint, DistinctErrors) {
  const fs::path dir = temp_dir("errors");
  save_checkpoint(small_params(), dir / "ok.ckpt");
  auto bytes = io::read_file((dir / "ok.ckpt").string());

  auto bad = bytes;
  bad[0] = 'X';
  io::write_file_atomic((dir / "magic.ckpt").string(), bad);
  EXPECT_THROW(load_checkpoint(dir / "magic.ckpt"), BadMagicError);

  bad = bytes;
  bad[7] = '9';
  io::write_file_atomic((dir / "version.ckpt").string(), bad);
  EXPECT_THROW(load_checkpoint(dir / "version.ckpt"), VersionMismatchError);

  bad.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2));
  io::write_file_atomic((dir / "short.ckpt").string(), bad);
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), TruncatedError);

  bad = bytes;
  bad[bytes.size() - 20] ^= 0x40;  // inside the last value
  io::write_file_atomic((dir / "flip.ckpt").string(), bad);
  EXPECT_THROW(load_checkpoint(dir / "flip.ckpt"), ChecksumError);

  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), Error);
}

TEST(Rng, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(1, "a"), derive_seed(1, "a"));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(2, "a"));
  EXPECT_NE(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
  // FNV-1a reference value of the empty string and of "a".
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Rng, Uniform01Range) {
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double u = uniform01(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(BinaryIo, LittleEndianRoundTrip) {
  io::Writer w;
  w.put<std::uint32_t>(0x01020304u);
  w.f64(-2.5);
  w.str("xy");
  const auto& buf = w.buffer();
  EXPECT_EQ(buf[0], 0x04);
  EXPECT_EQ(buf[3], 0x01);
  io::Reader r(buf);
  EXPECT_EQ(r.get<std::uint32_t>(), 0x01020304u);
  EXPECT_EQ(r.f64(), -2.5);
  EXPECT_EQ(r.str(2), "xy");
  EXPECT_THROW(r.get<std::uint8_t>(), TruncatedError);
}
