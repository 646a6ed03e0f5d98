#include "bsl/synthscan.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "bsl/binary_io.hpp"
#include "bsl/errors.hpp"
#include "bsl/parallel.hpp"
#include "bsl/rng.hpp"

namespace bsl {

const char* landmark_name(std::size_t landmark) {
  switch (landmark) {
    case kHeadCircumference: return "hc";
    case kCavumSepti: return "csp";
    case kLateralVentricle: return "lv";
  }
  return "?";
}

std::span<const float> Scan::frame(std::size_t t) const {
  return std::span<const float>(frames).subspan(t * frame_size(), frame_size());
}

std::span<const std::uint8_t> Scan::mask(std::size_t t, std::size_t landmark) const {
  return std::span<const std::uint8_t>(masks).subspan((t * landmarks + landmark) * frame_size(), frame_size());
}

bool Scan::mask_empty(std::size_t t, std::size_t landmark) const {
  auto m = mask(t, landmark);
  return std::none_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; });
}

void GeneratorParams::validate() const {
  if (frames < 2 || height < 8 || width < 8) throw ConfigError("scan dimensions too small");
  if (!(fps > 0)) throw ConfigError("fps must be positive");
  if (!(noise_sigma >= 0)) throw ConfigError("noise_sigma must be non-negative");
  if (profile.kind == QualityProfile::Kind::kConstant && !(profile.constant >= 0 && profile.constant <= 1)) {
    throw ConfigError("constant quality must lie in [0,1]");
  }
}

namespace {

constexpr float kBackground = 0.08f;
constexpr float kBrain = 0.30f;
constexpr float kSkull = 0.95f;
constexpr float kCspIntensity = 0.65f;
constexpr float kLvIntensity = 0.85f;

double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

// Per-scan anatomy in pixel coordinates.
struct Anatomy {
  double cx, cy, ax, ay;           // skull ellipse
  double csp_dx, csp_dy, csp_hw, csp_hh;  // rectangle offset from centre and half sizes
  double lv_dx, lv_dy;                    // polygon centre offset
  std::array<double, 5> lv_angle, lv_radius;
  double arc_phase;
};

Anatomy draw_anatomy(Rng& rng, int h, int w) {
  Anatomy a{};
  a.cx = w / 2.0 + (uniform01(rng) - 0.5) * 3.0;
  a.cy = h / 2.0 + (uniform01(rng) - 0.5) * 3.0;
  a.ax = w * (0.30 + 0.05 * uniform01(rng));
  a.ay = h * (0.30 + 0.05 * uniform01(rng));
  a.csp_dx = (uniform01(rng) - 0.5) * 0.2 * a.ax;
  a.csp_dy = -0.40 * a.ay;
  a.csp_hw = 0.26 * a.ax;
  a.csp_hh = 0.18 * a.ay;
  a.lv_dx = (uniform01(rng) < 0.5 ? -1.0 : 1.0) * 0.38 * a.ax;
  a.lv_dy = 0.30 * a.ay;
  const double r = 0.30 * std::min(a.ax, a.ay);
  const double phase = uniform01(rng) * 2 * std::numbers::pi;
  for (std::size_t k = 0; k < 5; ++k) {
    a.lv_angle[k] = phase + 2 * std::numbers::pi * static_cast<double>(k) / 5.0;
    a.lv_radius[k] = r * (0.88 + 0.24 * uniform01(rng));
  }
  a.arc_phase = uniform01(rng) * 2 * std::numbers::pi;
  return a;
}

bool inside_convex(const std::array<double, 10>& poly, double x, double y) {
  for (std::size_t k = 0; k < 5; ++k) {
    const double x0 = poly[2 * k], y0 = poly[2 * k + 1];
    const double x1 = poly[2 * ((k + 1) % 5)], y1 = poly[2 * ((k + 1) % 5) + 1];
    if ((x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) < 0) return false;
  }
  return true;
}

std::vector<float> quality_trajectory(Rng& rng, const GeneratorParams& p, float skill, std::uint32_t& t_sp) {
  const std::uint32_t n = p.frames;
  std::vector<float> q(n);
  if (p.profile.kind == QualityProfile::Kind::kConstant) {
    std::fill(q.begin(), q.end(), p.profile.constant);
    t_sp = n - 1 - std::min<std::uint32_t>(n - 1, 2);
    return q;
  }
  // Standard plane in the last third, a few frames before the end of the clip.
  const std::uint32_t lo = (2 * n) / 3;
  const std::uint32_t hi = n >= 4 ? n - 3 : n - 1;
  t_sp = lo + static_cast<std::uint32_t>(uniform_index(rng, std::max<std::uint32_t>(1, hi - lo + 1)));
  t_sp = std::min(t_sp, n - 1);

  const double start = 0.02 + 0.22 * uniform01(rng);
  const double plateau = 0.45 + 0.40 * skill;
  const double sigma = 0.07 * (1.3 - skill);
  double w = start;
  double smooth = start;
  std::vector<double> walk(n);
  for (std::uint32_t t = 0; t < n; ++t) {
    double target;
    if (t <= t_sp) {
      target = start + (plateau - start) * std::min(1.0, 1.4 * t / std::max<double>(1, t_sp));
    } else {
      target = plateau * 0.6;
    }
    w += 0.25 * (target - w) + sigma * normal(rng);
    w = std::clamp(w, 0.0, 1.0);
    smooth = 0.5 * smooth + 0.5 * w;
    walk[t] = smooth;
  }
  const double peak = 0.82 + 0.18 * skill;
  const double width = 2.0 + 4.0 * skill;
  for (std::uint32_t t = 0; t < n; ++t) {
    const double d = static_cast<double>(t) - t_sp;
    const double bump = peak * std::exp(-d * d / (2 * width * width));
    q[t] = static_cast<float>(std::clamp(std::max(walk[t], bump), 0.0, 1.0));
  }
  q[t_sp] = *std::max_element(q.begin(), q.end());
  return q;
}

}  // namespace

float draw_years_experience(std::uint64_t seed, float skill_level) {
  Rng rng(seed);
  // Standardized skill plus independent noise, mixed for a weak link.
  const double z_skill = (static_cast<double>(skill_level) - 0.5) * std::sqrt(12.0);
  const double z = 0.38 * z_skill + std::sqrt(1 - 0.38 * 0.38) * normal(rng);
  return static_cast<float>(std::clamp(8.0 + 5.0 * z, 0.5, 30.0));
}

Scan generate_scan(std::uint64_t seed, const GeneratorParams& params) {
  params.validate();
  Rng rng(derive_seed(seed, "scan"));
  const int h = params.height, w = params.width;

  float skill = params.profile.skill_level;
  if (skill < 0) skill = static_cast<float>(uniform01(rng));
  skill = std::clamp(skill, 0.0f, 1.0f);

  Scan scan;
  scan.num_frames = params.frames;
  scan.height = params.height;
  scan.width = params.width;
  scan.landmarks = kNumLandmarks;
  scan.fps = params.fps;
  scan.years_experience = draw_years_experience(derive_seed(seed, "years"), skill);
  scan.quality = quality_trajectory(rng, params, skill, scan.t_sp);

  const Anatomy a = draw_anatomy(rng, h, w);
  const std::size_t plane = scan.frame_size();
  scan.frames.assign(plane * params.frames, kBackground);
  scan.masks.assign(plane * params.frames * kNumLandmarks, 0);

  for (std::uint32_t t = 0; t < params.frames; ++t) {
    const double q = scan.quality[t];
    const double jitter = 1.0 - q;
    const double ox = 1.5 * jitter * normal(rng);
    const double oy = 1.5 * jitter * normal(rng);
    const double zoom = 1.0 + 0.08 * jitter * normal(rng);
    const double cx = a.cx + ox, cy = a.cy + oy;
    const double ax = a.ax * zoom, ay = a.ay * zoom;

    const bool hc = q > kHcThreshold;
    const bool csp = q > kCspThreshold;
    const bool lv = q > kLvThreshold;
    const double arc = std::clamp((q - kHcThreshold) / (kHcFullArcThreshold - kHcThreshold), 0.0, 1.0);

    std::array<double, 10> poly{};
    for (std::size_t k = 0; k < 5; ++k) {
      poly[2 * k] = cx + a.lv_dx * zoom + a.lv_radius[k] * zoom * std::cos(a.lv_angle[k]);
      poly[2 * k + 1] = cy + a.lv_dy * zoom + a.lv_radius[k] * zoom * std::sin(a.lv_angle[k]);
    }

    float* img = scan.frames.data() + t * plane;
    std::uint8_t* m_hc = scan.masks.data() + (t * kNumLandmarks + kHeadCircumference) * plane;
    std::uint8_t* m_csp = scan.masks.data() + (t * kNumLandmarks + kCavumSepti) * plane;
    std::uint8_t* m_lv = scan.masks.data() + (t * kNumLandmarks + kLateralVentricle) * plane;

    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        float v = kBackground;
        if (hc) {
          const double dx = (px - cx) / ax, dy = (py - cy) / ay;
          const double r = std::sqrt(dx * dx + dy * dy);
          if (r <= 1.0) {
            m_hc[i] = 1;
            v = static_cast<float>(kBackground + (kBrain - kBackground) * (0.4 + 0.6 * arc));
            if (r >= 0.85) {
              // Only part of the skull is in view at low quality.
              double ang = std::atan2(dy, dx) - a.arc_phase;
              ang = std::fmod(ang + 4 * std::numbers::pi, 2 * std::numbers::pi);
              if (ang <= arc * 2 * std::numbers::pi) v = kSkull;
            }
          }
        }
        if (csp && std::abs(px - (cx + a.csp_dx * zoom)) <= a.csp_hw * zoom &&
            std::abs(py - (cy + a.csp_dy * zoom)) <= a.csp_hh * zoom) {
          m_csp[i] = 1;
          v = kCspIntensity;
        }
        if (lv && inside_convex(poly, px, py)) {
          m_lv[i] = 1;
          v = kLvIntensity;
        }
        const double noisy = v + jitter * params.noise_sigma * normal(rng);
        img[i] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
      }
    }
  }
  return scan;
}

// ---------------------------------------------------------------------------
// Scan I/O
// ---------------------------------------------------------------------------

namespace {

constexpr char kScanMagic[] = "BSLSCAN1";
constexpr std::size_t kHeaderBytes = 8 + 2 + 4 + 2 + 2 + 1 + 4 + 4 + 4 + 4 + 4;

void put_header(io::Writer& out, const Scan& s) {
  out.str(std::string_view(kScanMagic, 8));
  out.put<std::uint16_t>(kScanFormatVersion);
  out.put<std::uint32_t>(s.num_frames);
  out.put<std::uint16_t>(s.height);
  out.put<std::uint16_t>(s.width);
  out.put<std::uint8_t>(s.landmarks);
  out.f32(s.fps);
  out.put<std::uint32_t>(s.t_sp);
  out.f32(s.years_experience);
  out.put<std::uint32_t>(s.subject_id);
  out.put<std::uint32_t>(s.sonographer_id);
}

ScanHeader get_header(io::Reader& in) {
  if (in.remaining() < 8 || in.str(8) != std::string_view(kScanMagic, 8)) {
    throw BadMagicError("not a scan file (bad magic)");
  }
  ScanHeader h;
  h.version = in.get<std::uint16_t>();
  if (h.version != kScanFormatVersion) {
    throw VersionMismatchError("scan format version " + std::to_string(h.version) + ", expected " +
                               std::to_string(kScanFormatVersion));
  }
  h.num_frames = in.get<std::uint32_t>();
  h.height = in.get<std::uint16_t>();
  h.width = in.get<std::uint16_t>();
  h.landmarks = in.get<std::uint8_t>();
  h.fps = in.f32();
  h.t_sp = in.get<std::uint32_t>();
  h.years_experience = in.f32();
  h.subject_id = in.get<std::uint32_t>();
  h.sonographer_id = in.get<std::uint32_t>();
  return h;
}

std::size_t row_bytes(std::size_t width) { return (width + 7) / 8; }

}  // namespace

std::vector<std::uint8_t> encode_scan(const Scan& s) {
  const std::size_t plane = s.frame_size();
  if (s.frames.size() != plane * s.num_frames || s.masks.size() != plane * s.num_frames * s.landmarks ||
      s.quality.size() != s.num_frames) {
    throw ContractError("scan buffers do not match its header dimensions");
  }
  io::Writer out;
  out.buffer().reserve(kHeaderBytes + s.frames.size() * 4 + s.masks.size() / 8 + s.num_frames * 4 + 16);
  put_header(out, s);
  for (float v : s.frames) out.f32(v);
  const std::size_t rb = row_bytes(s.width);
  std::vector<std::uint8_t> row(rb);
  for (std::size_t p = 0; p < static_cast<std::size_t>(s.num_frames) * s.landmarks; ++p) {
    const std::uint8_t* m = s.masks.data() + p * plane;
    for (std::size_t y = 0; y < s.height; ++y) {
      std::fill(row.begin(), row.end(), 0);
      for (std::size_t x = 0; x < s.width; ++x) {
        if (m[y * s.width + x]) row[x / 8] |= static_cast<std::uint8_t>(1u << (x % 8));
      }
      out.bytes(row);
    }
  }
  for (float v : s.quality) out.f32(v);
  out.put<std::uint64_t>(io::fnv1a64(out.buffer()));
  return std::move(out.buffer());
}

Scan decode_scan(std::span<const std::uint8_t> bytes) {
  io::Reader in(bytes);
  const ScanHeader h = get_header(in);
  Scan s;
  s.num_frames = h.num_frames;
  s.height = h.height;
  s.width = h.width;
  s.landmarks = h.landmarks;
  s.fps = h.fps;
  s.t_sp = h.t_sp;
  s.years_experience = h.years_experience;
  s.subject_id = h.subject_id;
  s.sonographer_id = h.sonographer_id;

  const std::size_t plane = s.frame_size();
  const std::size_t rb = row_bytes(s.width);
  const std::uint64_t planes = static_cast<std::uint64_t>(s.num_frames) * s.landmarks;
  const std::uint64_t expected = kHeaderBytes + static_cast<std::uint64_t>(plane) * s.num_frames * 4 +
                                 planes * s.height * rb + static_cast<std::uint64_t>(s.num_frames) * 4 + 8;
  if (bytes.size() < expected) {
    throw TruncatedError("scan file has " + std::to_string(bytes.size()) + " bytes, header implies " +
                         std::to_string(expected));
  }
  if (bytes.size() > expected) throw FormatError("trailing bytes after scan trailer");
  const std::uint64_t checksum = io::fnv1a64(bytes.first(bytes.size() - 8));

  s.frames.resize(plane * s.num_frames);
  for (auto& v : s.frames) v = in.f32();
  s.masks.assign(plane * planes, 0);
  for (std::size_t p = 0; p < planes; ++p) {
    std::uint8_t* m = s.masks.data() + p * plane;
    for (std::size_t y = 0; y < s.height; ++y) {
      auto row = in.take(rb);
      for (std::size_t x = 0; x < s.width; ++x) m[y * s.width + x] = (row[x / 8] >> (x % 8)) & 1u;
    }
  }
  s.quality.resize(s.num_frames);
  for (auto& v : s.quality) v = in.f32();
  if (in.get<std::uint64_t>() != checksum) throw ChecksumError("scan checksum mismatch");
  return s;
}

void write_scan(const Scan& scan, const std::filesystem::path& path) {
  io::write_file_atomic(path.string(), encode_scan(scan));
}

Scan read_scan(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path.string());
  try {
    return decode_scan(bytes);
  } catch (const FormatError& e) {
    // Keep the error type, add the path.
    const std::string msg = path.string() + ": " + e.what();
    if (dynamic_cast<const BadMagicError*>(&e)) throw BadMagicError(msg);
    if (dynamic_cast<const VersionMismatchError*>(&e)) throw VersionMismatchError(msg);
    if (dynamic_cast<const TruncatedError*>(&e)) throw TruncatedError(msg);
    if (dynamic_cast<const ChecksumError*>(&e)) throw ChecksumError(msg);
    throw FormatError(msg);
  }
}

ScanHeader read_scan_header(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> buf(kHeaderBytes);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  buf.resize(static_cast<std::size_t>(f.gcount()));
  io::Reader in(buf);
  return get_header(in);
}

// ---------------------------------------------------------------------------
// Sequences
// ---------------------------------------------------------------------------

SequenceSample sample_sequence(const Scan& scan, std::uint64_t seed, std::uint32_t tau, std::uint32_t stride) {
  if (tau == 0 || stride == 0) throw ContractError("tau and stride must be positive");
  const std::uint64_t span = static_cast<std::uint64_t>(stride) * (tau - 1) + 1;
  if (span > scan.num_frames) {
    throw ContractError("window of " + std::to_string(tau) + " frames at stride " + std::to_string(stride) +
                        " does not fit in " + std::to_string(scan.num_frames) + " frames");
  }
  Rng rng(seed);
  SequenceSample s;
  s.tau = tau;
  s.stride = stride;
  s.start = static_cast<std::uint32_t>(uniform_index(rng, scan.num_frames - span + 1));
  return s;
}

const char* split_name(Split split) {
  switch (split) {
    case Split::kTask: return "task";
    case Split::kSkill: return "skill";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "task") return Split::kTask;
  if (name == "skill") return Split::kSkill;
  if (name == "test") return Split::kTest;
  throw FormatError("unknown split '" + name + "'");
}

Sequence make_sequence(const Scan& scan, const SequenceSample& sample, Split split) {
  if (sample.tau == 0 || sample.stride == 0 ||
      static_cast<std::uint64_t>(sample.start) + sample.span() > scan.num_frames) {
    throw ContractError("sequence window outside scan");
  }
  const std::size_t h = scan.height, w = scan.width, plane = scan.frame_size(), L = scan.landmarks;
  Sequence seq;
  seq.sample = sample;
  seq.split = split;
  seq.subject_id = scan.subject_id;
  seq.sonographer_id = scan.sonographer_id;
  seq.frames = Tensor({sample.tau, h, w});
  seq.targets = Tensor({sample.tau * L, h, w});
  Real q_sum = 0;
  for (std::uint32_t j = 0; j < sample.tau; ++j) {
    const std::uint32_t t = sample.frame(j);
    q_sum += scan.quality[t];
    auto f = scan.frame(t);
    Real mean = 0;
    for (float v : f) mean += v;
    mean /= static_cast<Real>(plane);
    Real var = 0;
    for (float v : f) var += (v - mean) * (v - mean);
    const Real sd = std::sqrt(var / static_cast<Real>(plane));
    const Real inv = sd > 1e-6 ? 1 / sd : Real{1};
    Real* dst = seq.frames.ptr() + j * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = (f[i] - mean) * inv;
    for (std::size_t l = 0; l < L; ++l) {
      auto m = scan.mask(t, l);
      Real* tg = seq.targets.ptr() + (j * L + l) * plane;
      for (std::size_t i = 0; i < plane; ++i) tg[i] = m[i] ? Real{1} : Real{0};
    }
  }
  seq.mean_quality = q_sum / sample.tau;
  return seq;
}

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

void CorpusManifest::validate() const {
  std::map<std::uint32_t, Split> subject_split, sonographer_split;
  auto check = [](std::map<std::uint32_t, Split>& seen, std::uint32_t id, Split split, const char* what) {
    auto [it, inserted] = seen.emplace(id, split);
    if (!inserted && it->second != split) {
      throw ContractError(std::string(what) + " " + std::to_string(id) + " appears in splits " +
                          split_name(it->second) + " and " + split_name(split));
    }
  };
  for (const auto& e : entries) {
    check(subject_split, e.subject_id, e.split, "subject");
    check(sonographer_split, e.sonographer_id, e.split, "sonographer");
  }
}

std::size_t CorpusManifest::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == split; }));
}

std::string CorpusManifest::to_text() const {
  std::ostringstream os;
  os << "# bsl corpus manifest v1\n";
  os << "# seed=" << seed << "\n";
  os << "# frames=" << params.frames << " height=" << params.height << " width=" << params.width
     << " fps=" << params.fps << " noise_sigma=" << params.noise_sigma << "\n";
  for (const auto& e : entries) {
    os << e.path << '\t' << e.subject_id << '\t' << e.sonographer_id << '\t' << split_name(e.split) << '\n';
  }
  return os.str();
}

CorpusManifest CorpusManifest::parse(const std::string& text) {
  CorpusManifest m;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream kv(line.substr(1));
      std::string tok;
      while (kv >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "seed") m.seed = std::stoull(val);
        else if (key == "frames") m.params.frames = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "height") m.params.height = static_cast<std::uint16_t>(std::stoul(val));
        else if (key == "width") m.params.width = static_cast<std::uint16_t>(std::stoul(val));
        else if (key == "fps") m.params.fps = std::stof(val);
        else if (key == "noise_sigma") m.params.noise_sigma = std::stof(val);
      }
      continue;
    }
    std::vector<std::string> cols;
    std::size_t pos = 0;
    while (true) {
      const auto tab = line.find('\t', pos);
      cols.push_back(line.substr(pos, tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (cols.size() != 4) throw FormatError("manifest line " + std::to_string(lineno) + ": expected 4 columns");
    ManifestEntry e;
    e.path = cols[0];
    try {
      e.subject_id = static_cast<std::uint32_t>(std::stoul(cols[1]));
      e.sonographer_id = static_cast<std::uint32_t>(std::stoul(cols[2]));
    } catch (const std::exception&) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": bad id");
    }
    e.split = parse_split(cols[3]);
    m.entries.push_back(std::move(e));
  }
  return m;
}

CorpusManifest make_corpus(std::uint64_t seed, const SplitCounts& counts, const GeneratorParams& params,
                           const std::filesystem::path& dir, std::size_t threads) {
  if (counts.task + counts.skill + counts.test == 0) throw ContractError("corpus needs at least one scan");
  params.validate();

  struct Job {
    Split split;
    std::uint32_t subject, sonographer;
    float skill;
    float years;
  };
  std::vector<Job> jobs;
  Rng rng(derive_seed(seed, "corpus"));
  std::uint32_t next_sonographer = 1;
  std::uint32_t next_subject = 1001;
  for (auto [split, n] : {std::pair{Split::kTask, counts.task}, std::pair{Split::kSkill, counts.skill},
                          std::pair{Split::kTest, counts.test}}) {
    // Two scans per operator; pools never cross splits.
    const std::size_t operators = (n + 1) / 2;
    std::vector<std::pair<float, float>> pool;  // skill level, years
    for (std::size_t o = 0; o < operators; ++o) {
      const auto skill = static_cast<float>(uniform01(rng));
      pool.emplace_back(skill, draw_years_experience(derive_seed(seed, "years", next_sonographer + o), skill));
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t o = i % operators;
      const float jitter = static_cast<float>(0.08 * std::normal_distribution<double>(0, 1)(rng));
      jobs.push_back({split, next_subject++, static_cast<std::uint32_t>(next_sonographer + o),
                      std::clamp(pool[o].first + jitter, 0.0f, 1.0f), pool[o].second});
    }
    next_sonographer += static_cast<std::uint32_t>(operators);
  }

  std::filesystem::create_directories(dir / "scans");
  CorpusManifest manifest;
  manifest.seed = seed;
  manifest.params = params;
  manifest.entries.resize(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    GeneratorParams p = params;
    p.profile.kind = QualityProfile::Kind::kRandomWalk;
    p.profile.skill_level = jobs[i].skill;
    Scan scan = generate_scan(derive_seed(seed, "scan", i), p);
    scan.subject_id = jobs[i].subject;
    scan.sonographer_id = jobs[i].sonographer;
    scan.years_experience = jobs[i].years;
    char name[32];
    std::snprintf(name, sizeof(name), "scans/scan_%04zu.bscan", i);
    write_scan(scan, dir / name);
    manifest.entries[i] = {name, jobs[i].subject, jobs[i].sonographer, jobs[i].split};
  });
  manifest.validate();
  const std::string text = manifest.to_text();
  io::write_file_atomic((dir / kManifestFile).string(),
                        std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return manifest;
}

std::vector<std::size_t> Corpus::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    if (manifest.entries[i].split == split) out.push_back(i);
  }
  return out;
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.root = dir;
  const auto bytes = io::read_file((dir / kManifestFile).string());
  c.manifest = CorpusManifest::parse(std::string(bytes.begin(), bytes.end()));
  c.manifest.validate();
  for (const auto& e : c.manifest.entries) {
    Scan s = read_scan(dir / e.path);
    if (s.subject_id != e.subject_id || s.sonographer_id != e.sonographer_id) {
      throw FormatError("scan '" + e.path + "' ids disagree with the manifest");
    }
    c.scans.push_back(std::move(s));
  }
  return c;
}

}  // namespace bsl
