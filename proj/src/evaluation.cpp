#include "bsl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

#include "bsl/parallel.hpp"

namespace bsl {

std::vector<std::uint8_t> binarize(std::span<const Real> probs, Real threshold) {
  std::vector<std::uint8_t> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= threshold ? 1 : 0;
  return out;
}

Real dice_score(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw ShapeError("dice_score: mask sizes differ");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) throw ContractError("dice_score: both masks are empty");
  return 2.0 * static_cast<Real>(both) / static_cast<Real>(p + g);
}

std::vector<std::size_t> mask_boundary(std::span<const std::uint8_t> mask, std::size_t height, std::size_t width) {
  if (mask.size() != height * width) throw ShapeError("mask_boundary: mask size does not match height*width");
  std::vector<std::size_t> out;
  auto on = [&](std::size_t y, std::size_t x) { return mask[y * width + x] != 0; };
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      if (!on(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == height || x + 1 == width || !on(y - 1, x) ||
                        !on(y + 1, x) || !on(y, x - 1) || !on(y, x + 1);
      if (edge) out.push_back(y * width + x);
    }
  }
  return out;
}

namespace {

constexpr std::int64_t kFar = std::int64_t{1} << 40;

// Exact 1-D squared distance transform (lower envelope of parabolas).
void edt_1d(const std::int64_t* f, std::int64_t* d, std::size_t n, std::vector<std::size_t>& v,
            std::vector<double>& z) {
  v.assign(n, 0);
  z.assign(n + 1, 0);
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto sect = [&](std::size_t q, std::size_t p) {
    const double fq = static_cast<double>(f[q]) + static_cast<double>(q * q);
    const double fp = static_cast<double>(f[p]) + static_cast<double>(p * p);
    return (fq - fp) / (2.0 * (static_cast<double>(q) - static_cast<double>(p)));
  };
  for (std::size_t q = 1; q < n; ++q) {
    double s = sect(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = sect(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const std::int64_t dq = static_cast<std::int64_t>(q) - static_cast<std::int64_t>(v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

// Squared Euclidean distance of every pixel to the nearest listed site.
std::vector<std::int64_t> squared_distance_map(std::span<const std::size_t> sites, std::size_t height,
                                               std::size_t width) {
  std::vector<std::int64_t> grid(height * width, kFar);
  for (std::size_t s : sites) grid[s] = 0;
  std::vector<std::size_t> v;
  std::vector<double> z;
  std::vector<std::int64_t> col_in(height), col_out(height);
  for (std::size_t x = 0; x < width; ++x) {
    for (std::size_t y = 0; y < height; ++y) col_in[y] = grid[y * width + x];
    edt_1d(col_in.data(), col_out.data(), height, v, z);
    for (std::size_t y = 0; y < height; ++y) grid[y * width + x] = col_out[y];
  }
  std::vector<std::int64_t> row_out(width);
  for (std::size_t y = 0; y < height; ++y) {
    edt_1d(grid.data() + y * width, row_out.data(), width, v, z);
    std::copy(row_out.begin(), row_out.end(), grid.begin() + static_cast<std::ptrdiff_t>(y * width));
  }
  return grid;
}

}  // namespace

Real assd(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, std::size_t height, std::size_t width) {
  if (a.size() != b.size()) throw ShapeError("assd: mask sizes differ");
  const auto ba = mask_boundary(a, height, width);
  const auto bb = mask_boundary(b, height, width);
  if (ba.empty() || bb.empty()) throw EmptyMaskError("assd: empty mask");
  const auto da = squared_distance_map(ba, height, width);
  const auto db = squared_distance_map(bb, height, width);
  Real sum_a = 0, sum_b = 0;
  for (std::size_t p : ba) sum_a += std::sqrt(static_cast<Real>(db[p]));
  for (std::size_t p : bb) sum_b += std::sqrt(static_cast<Real>(da[p]));
  return (sum_a + sum_b) / static_cast<Real>(ba.size() + bb.size());
}

Real skill_mse(std::span<const Real> pred, std::span<const Real> target) {
  if (pred.size() != target.size()) throw ContractError("skill_mse: length mismatch");
  if (pred.empty()) throw ContractError("skill_mse: empty input");
  return mean_squared_error(pred, target);
}

Real pearson(std::span<const Real> x, std::span<const Real> y) {
  if (x.size() != y.size()) throw ContractError("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return 0;
  const Real mx = std::accumulate(x.begin(), x.end(), Real{0}) / static_cast<Real>(n);
  const Real my = std::accumulate(y.begin(), y.end(), Real{0}) / static_cast<Real>(n);
  Real sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0 || syy <= 0) return 0;
  return sxy / std::sqrt(sxx * syy);
}

namespace {

std::vector<Real> average_ranks(std::span<const Real> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<Real> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const Real avg = (static_cast<Real>(i) + static_cast<Real>(j)) / 2 + 1;
    for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

Real spearman(std::span<const Real> x, std::span<const Real> y) {
  if (x.size() != y.size()) throw ContractError("spearman: length mismatch");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

std::vector<std::size_t> top_k(std::span<const Real> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

Real improvement_ratio(std::span<const ScanWindows> scans, std::size_t k) {
  if (scans.empty()) throw ContractError("improvement_ratio: no scans");
  if (k == 0) throw ContractError("improvement_ratio: k must be positive");
  std::size_t improved = 0;
  for (const auto& s : scans) {
    if (s.scores.size() != s.metrics.size()) throw ContractError("improvement_ratio: score/metric length mismatch");
    if (s.scores.size() < k) throw ContractError("improvement_ratio: fewer candidate windows than k");
    // Means are taken about the first metric so window-invariant metrics
    // compare exactly equal.
    const Real ref = s.metrics[0];
    Real all = 0;
    for (Real m : s.metrics) all += m - ref;
    all /= static_cast<Real>(s.metrics.size());
    Real top = 0;
    for (std::size_t i : top_k(s.scores, k)) top += s.metrics[i] - ref;
    top /= static_cast<Real>(k);
    if (top > all) ++improved;
  }
  return static_cast<Real>(improved) / static_cast<Real>(scans.size());
}

PlaneProximity plane_proximity(std::span<const std::uint32_t> starts, std::span<const Real> scores,
                               std::uint32_t t_sp, std::uint32_t tau, std::uint32_t stride, float fps) {
  if (starts.size() != scores.size() || starts.empty()) {
    throw ContractError("plane_proximity: starts and scores must be equally long and non-empty");
  }
  auto contains = [&](std::uint32_t t) { return t <= t_sp && t_sp < t + stride * tau; };
  const auto best = top_k(scores, 5);
  PlaneProximity p;
  p.top1_eq_sp = contains(starts[best[0]]);
  for (std::size_t i : best) p.top5_contains_sp = p.top5_contains_sp || contains(starts[i]);
  const Real center = static_cast<Real>(starts[best[0]]) + static_cast<Real>(stride) * (static_cast<Real>(tau) - 1) / 2;
  p.dist_seconds = std::abs(center - static_cast<Real>(t_sp)) / static_cast<Real>(fps);
  return p;
}

MeanSd mean_sd(std::span<const Real> values) {
  MeanSd m;
  m.count = values.size();
  if (values.empty()) return m;
  m.mean = std::accumulate(values.begin(), values.end(), Real{0}) / static_cast<Real>(values.size());
  Real ss = 0;
  for (Real v : values) ss += (v - m.mean) * (v - m.mean);
  m.sd = values.size() > 1 ? std::sqrt(ss / static_cast<Real>(values.size() - 1)) : 0;
  return m;
}

Real variance(std::span<const Real> values) {
  if (values.empty()) return 0;
  const Real mean = std::accumulate(values.begin(), values.end(), Real{0}) / static_cast<Real>(values.size());
  Real ss = 0;
  for (Real v : values) ss += (v - mean) * (v - mean);
  return ss / static_cast<Real>(values.size());
}

void MetricsRecord::check() const {
  auto in01 = [](Real v) { return std::isfinite(v) && v >= 0 && v <= 1; };
  for (std::size_t l = 0; l < kNumLandmarks; ++l) {
    if (!in01(dice[l].mean)) throw ContractError(std::string("dice out of range for ") + landmark_name(l));
    if (!(std::isfinite(assd[l].mean) && assd[l].mean >= 0)) {
      throw ContractError(std::string("assd out of range for ") + landmark_name(l));
    }
  }
  if (!(std::isfinite(skill_mse) && skill_mse >= 0)) throw ContractError("skill_mse out of range");
  if (!in01(r_top1) || !in01(r_top5)) throw ContractError("improvement ratio out of range");
  if (!in01(top1_eq_sp) || !in01(top5_contains_sp)) throw ContractError("standard-plane fraction out of range");
  if (!(std::isfinite(dist_seconds) && dist_seconds >= 0)) throw ContractError("dist_seconds out of range");
  if (!(std::isfinite(spearman_vs_latent) && spearman_vs_latent >= -1 && spearman_vs_latent <= 1)) {
    throw ContractError("spearman_vs_latent out of range");
  }
}

EvalConfig eval_config_from(const TrainerConfig& cfg) {
  EvalConfig e;
  e.tau = cfg.tau;
  e.stride = cfg.stride;
  e.ltheta = cfg.ltheta;
  e.raw_loss_target = cfg.raw_loss_target;
  e.threads = cfg.threads;
  return e;
}

std::vector<std::uint32_t> tile_windows(std::uint32_t num_frames, std::uint32_t tau, std::uint32_t stride) {
  const std::uint32_t span = stride * (tau - 1) + 1;
  if (tau < 1 || stride < 1 || span > num_frames) throw ContractError("scan shorter than one window");
  const std::uint32_t step = std::max<std::uint32_t>(1, tau / 2) * stride;
  const std::uint32_t last = num_frames - span;
  std::vector<std::uint32_t> starts;
  for (std::uint32_t t = 0; t <= last; t += step) starts.push_back(t);
  if (starts.back() != last) starts.push_back(last);
  return starts;
}

namespace {

struct WindowPass {
  WindowResult result;
  Real target = 0;                  // skill supervision from the segmenter
  std::vector<std::uint8_t> masks;  // binarized (tau*L,H,W)
};

WindowPass run_window(const Models& models, const ParamSet& theta, const ParamSet& omega, const Scan& scan,
                      std::uint32_t start, const EvalConfig& cfg, bool keep_masks) {
  const SequenceSample sample{0, start, cfg.tau, cfg.stride};
  const Sequence seq = make_sequence(scan, sample, Split::kTest);
  const Tensor probs = predict_probs(models.segmenter, theta, seq.frames);
  const FrameLossVector fl = frame_dice_losses(probs, seq.targets, scan.landmarks);
  const Real lt = ltheta(cfg.ltheta, fl.values);
  const Tensor input = seq.frames;
  const std::vector<Real> score = predict_scores(models.regressor, omega, std::span<const Tensor>(&input, 1), 1);
  WindowPass p;
  p.result.start = start;
  p.result.score = score[0];
  p.result.task_metric = 1 - lt;
  p.result.mean_quality = seq.mean_quality;
  p.target = skill_target(lt, cfg.raw_loss_target);
  if (keep_masks) p.masks = binarize(probs.data(), cfg.threshold);
  return p;
}

}  // namespace

std::vector<WindowResult> evaluate_windows(const Models& models, const ParamSet& theta, const ParamSet& omega,
                                           const Scan& scan, std::span<const std::uint32_t> starts,
                                           const EvalConfig& cfg) {
  std::vector<WindowResult> out(starts.size());
  parallel_for(starts.size(), cfg.threads, [&](std::size_t i) {
    out[i] = run_window(models, theta, omega, scan, starts[i], cfg, false).result;
  });
  return out;
}

MetricsRecord direct_evaluate(const Models& models, const ParamSet& theta, const ParamSet& omega,
                              const Corpus& corpus, std::span<const std::size_t> scans, const EvalConfig& cfg) {
  if (scans.empty()) throw ContractError("direct_evaluate: no scans");
  struct Job {
    std::size_t scan;
    std::uint32_t start;
  };
  std::vector<Job> jobs;
  std::vector<std::size_t> first_job;
  for (std::size_t s = 0; s < scans.size(); ++s) {
    first_job.push_back(jobs.size());
    for (std::uint32_t t : tile_windows(corpus.scans.at(scans[s]).num_frames, cfg.tau, cfg.stride)) {
      jobs.push_back({scans[s], t});
    }
  }
  first_job.push_back(jobs.size());

  std::vector<WindowPass> passes(jobs.size());
  parallel_for(jobs.size(), cfg.threads, [&](std::size_t j) {
    passes[j] = run_window(models, theta, omega, corpus.scans[jobs[j].scan], jobs[j].start, cfg, true);
  });

  MetricsRecord rec;
  rec.scans = scans.size();
  rec.windows = jobs.size();
  std::array<std::vector<Real>, kNumLandmarks> dice, dist;
  std::vector<Real> all_scores, all_targets, all_quality;
  std::vector<ScanWindows> per_scan;
  Real top1 = 0, top5 = 0, dist_s = 0;

  for (std::size_t s = 0; s < scans.size(); ++s) {
    const Scan& scan = corpus.scans[scans[s]];
    const std::size_t L = scan.landmarks, plane = scan.frame_size();
    ScanWindows sw;
    std::vector<std::uint32_t> starts;
    // Each frame is scored from the first window that covers it.
    std::vector<const std::uint8_t*> frame_pred(scan.num_frames, nullptr);
    for (std::size_t j = first_job[s]; j < first_job[s + 1]; ++j) {
      const WindowPass& p = passes[j];
      sw.scores.push_back(p.result.score);
      sw.metrics.push_back(p.result.task_metric);
      starts.push_back(p.result.start);
      all_scores.push_back(p.result.score);
      all_targets.push_back(p.target);
      all_quality.push_back(p.result.mean_quality);
      for (std::uint32_t k = 0; k < cfg.tau; ++k) {
        const std::uint32_t f = p.result.start + cfg.stride * k;
        if (!frame_pred[f]) frame_pred[f] = p.masks.data() + k * L * plane;
      }
    }
    for (std::size_t f = 0; f < scan.num_frames; ++f) {
      if (!frame_pred[f]) continue;
      for (std::size_t l = 0; l < L; ++l) {
        if (scan.mask_empty(f, l)) continue;
        const std::span<const std::uint8_t> pred(frame_pred[f] + l * plane, plane);
        const auto gt = scan.mask(f, l);
        dice[l].push_back(dice_score(pred, gt));
        try {
          dist[l].push_back(assd(pred, gt, scan.height, scan.width));
        } catch (const EmptyMaskError&) {
          ++rec.assd_excluded[l];
        }
      }
    }
    const PlaneProximity pp = plane_proximity(starts, sw.scores, scan.t_sp, cfg.tau, cfg.stride, scan.fps);
    top1 += pp.top1_eq_sp;
    top5 += pp.top5_contains_sp;
    dist_s += pp.dist_seconds;
    per_scan.push_back(std::move(sw));
  }

  for (std::size_t l = 0; l < kNumLandmarks; ++l) {
    rec.dice[l] = mean_sd(dice[l]);
    rec.assd[l] = mean_sd(dist[l]);
  }
  const Real n = static_cast<Real>(scans.size());
  rec.skill_mse = skill_mse(all_scores, all_targets);
  rec.r_top1 = improvement_ratio(per_scan, 1);
  std::size_t k5 = 5;
  for (const auto& sw : per_scan) k5 = std::min(k5, sw.scores.size());
  rec.r_top5 = improvement_ratio(per_scan, k5);
  rec.top1_eq_sp = top1 / n;
  rec.top5_contains_sp = top5 / n;
  rec.dist_seconds = dist_s / n;
  rec.spearman_vs_latent = spearman(all_scores, all_quality);
  return rec;
}

MetaSplit meta_split(const Corpus& corpus, std::span<const std::size_t> scans, Real fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction < 1)) throw ContractError("meta_split: fraction must lie in (0, 1)");
  std::map<std::uint32_t, std::vector<std::size_t>> groups;
  for (std::size_t idx : scans) groups[corpus.manifest.entries.at(idx).sonographer_id].push_back(idx);
  std::vector<std::uint32_t> ops;
  for (const auto& [op, _] : groups) ops.push_back(op);
  Rng rng(derive_seed(seed, "meta.split", static_cast<std::uint64_t>(std::llround(fraction * 1e6))));
  std::shuffle(ops.begin(), ops.end(), rng);
  const std::size_t n_train =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<Real>(ops.size()))));
  if (n_train >= ops.size()) throw ContractError("meta_split: fraction leaves the meta-test set empty");
  MetaSplit out;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    auto& dst = i < n_train ? out.train : out.test;
    dst.insert(dst.end(), groups[ops[i]].begin(), groups[ops[i]].end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

MetaEvalResult meta_evaluate(const Models& models, const ParamSet& theta, const ParamSet& omega,
                             const Corpus& corpus, std::span<const std::size_t> scans,
                             std::span<const Real> fractions, std::span<const std::size_t> epochs,
                             const TrainerConfig& train_cfg, const EvalConfig& cfg,
                             const FineTuneOptions& fine_tune_options) {
  MetaEvalResult out;
  for (Real fraction : fractions) {
    const MetaSplit split = meta_split(corpus, scans, fraction, train_cfg.seed);
    MetaEvalRow base{fraction, 0, split.train.size(), split.test.size(),
                     direct_evaluate(models, theta, omega, corpus, split.test, cfg)};
    out.baseline.push_back(base);
    const auto snaps = fine_tune(theta, omega, corpus, split.train, epochs, models, train_cfg, fine_tune_options);
    for (const auto& snap : snaps) {
      out.grid.push_back({fraction, snap.epoch, split.train.size(), split.test.size(),
                          direct_evaluate(models, snap.theta, snap.omega, corpus, split.test, cfg)});
    }
  }
  return out;
}

ScoreTrace score_trace(const Models& models, const ParamSet& theta, const ParamSet& omega, const Scan& scan,
                       const EvalConfig& cfg) {
  const std::uint32_t span = cfg.stride * (cfg.tau - 1) + 1;
  if (span > scan.num_frames) throw ContractError("score_trace: scan shorter than one window");
  std::vector<std::uint32_t> starts(scan.num_frames - span + 1);
  std::iota(starts.begin(), starts.end(), 0u);
  const auto windows = evaluate_windows(models, theta, omega, scan, starts, cfg);
  ScoreTrace tr;
  for (const auto& w : windows) {
    tr.time_s.push_back(static_cast<Real>(w.start) / static_cast<Real>(scan.fps));
    tr.skill_score.push_back(w.score);
    tr.task_metric.push_back(w.task_metric);
    tr.mean_quality.push_back(w.mean_quality);
  }
  return tr;
}

std::string format_real(Real v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string metrics_header() {
  std::string h;
  for (std::size_t l = 0; l < kNumLandmarks; ++l) {
    const std::string n = landmark_name(l);
    h += "dice_" + n + "_mean,dice_" + n + "_sd,";
  }
  for (std::size_t l = 0; l < kNumLandmarks; ++l) {
    const std::string n = landmark_name(l);
    h += "assd_" + n + "_px_mean,assd_" + n + "_px_sd,assd_" + n + "_excluded,";
  }
  h += "skill_mse,r_top1_frac,r_top5_frac,top1_eq_sp_frac,top5_contains_sp_frac,dist_seconds,"
       "spearman_vs_latent_artifact,scans,windows";
  return h;
}

std::string metrics_row(const MetricsRecord& m) {
  std::string r;
  for (std::size_t l = 0; l < kNumLandmarks; ++l) r += format_real(m.dice[l].mean) + ',' + format_real(m.dice[l].sd) + ',';
  for (std::size_t l = 0; l < kNumLandmarks; ++l) {
    r += format_real(m.assd[l].mean) + ',' + format_real(m.assd[l].sd) + ',' + std::to_string(m.assd_excluded[l]) + ',';
  }
  for (Real v : {m.skill_mse, m.r_top1, m.r_top5, m.top1_eq_sp, m.top5_contains_sp, m.dist_seconds,
                 m.spearman_vs_latent}) {
    r += format_real(v) + ',';
  }
  r += std::to_string(m.scans) + ',' + std::to_string(m.windows);
  return r;
}

void write_metrics_csv(std::ostream& os, std::span<const std::string> labels, std::span<const MetricsRecord> rows) {
  if (labels.size() != rows.size()) throw ContractError("write_metrics_csv: one label per row required");
  os << "label," << metrics_header() << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) os << labels[i] << ',' << metrics_row(rows[i]) << '\n';
}

void write_meta_csv(std::ostream& os, std::span<const MetaEvalRow> rows) {
  os << "fraction,epoch,train_scans,test_scans," << metrics_header() << '\n';
  for (const auto& r : rows) {
    os << format_real(r.fraction) << ',' << r.epoch << ',' << r.train_scans << ',' << r.test_scans << ','
       << metrics_row(r.metrics) << '\n';
  }
}

void write_trace_csv(std::ostream& os, const ScoreTrace& trace) {
  os << kTraceHeader << '\n';
  for (std::size_t i = 0; i < trace.time_s.size(); ++i) {
    os << format_real(trace.time_s[i]) << ',' << format_real(trace.skill_score[i]) << ','
       << format_real(trace.task_metric[i]) << '\n';
  }
}

}  // namespace bsl
