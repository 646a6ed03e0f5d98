#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bsl/tensor.hpp"

namespace bsl {

enum Landmark : std::size_t { kHeadCircumference = 0, kCavumSepti = 1, kLateralVentricle = 2 };
inline constexpr std::size_t kNumLandmarks = 3;
const char* landmark_name(std::size_t landmark);

/// One synthetic scanning video with its annotations and latent quality.
struct Scan {
  std::uint32_t subject_id = 0;
  std::uint32_t sonographer_id = 0;
  float years_experience = 0;
  std::uint32_t num_frames = 0;
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint8_t landmarks = kNumLandmarks;
  float fps = 10;
  std::uint32_t t_sp = 0;           // standard-plane frame, argmax of quality
  std::vector<float> frames;        // T*H*W intensities in [0,1]
  std::vector<std::uint8_t> masks;  // T*L*H*W, 0 or 1
  std::vector<float> quality;       // T latent operator quality in [0,1]

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width; }
  std::span<const float> frame(std::size_t t) const;
  std::span<const std::uint8_t> mask(std::size_t t, std::size_t landmark) const;
  bool mask_empty(std::size_t t, std::size_t landmark) const;

  friend bool operator==(const Scan&, const Scan&) = default;
};

struct QualityProfile {
  enum class Kind { kRandomWalk, kConstant };
  Kind kind = Kind::kRandomWalk;
  float constant = 1;      // q(t) for kConstant
  float skill_level = -1;  // operator skill in [0,1] for kRandomWalk; < 0 draws it from the seed
};

struct GeneratorParams {
  std::uint32_t frames = 64;
  std::uint16_t height = 32;
  std::uint16_t width = 40;
  float fps = 10;
  float noise_sigma = 0.3f;
  QualityProfile profile;

  void validate() const;
};

// Landmark visibility thresholds on q(t).
inline constexpr float kHcThreshold = 0.2f;
inline constexpr float kHcFullArcThreshold = 0.5f;
inline constexpr float kCspThreshold = 0.6f;
inline constexpr float kLvThreshold = 0.75f;

Scan generate_scan(std::uint64_t seed, const GeneratorParams& params);

/// Years of experience for an operator of the given skill level; only weakly
/// tied to skill.
float draw_years_experience(std::uint64_t seed, float skill_level);

// ---------------------------------------------------------------------------
// Scan file format (little-endian):
//   "BSLSCAN1", u16 version, u32 T, u16 H, u16 W, u8 L, f32 fps, u32 t_sp,
//   f32 years_experience, u32 subject_id, u32 sonographer_id
//   f32 frames[T*H*W]
//   masks: T*L bitplanes; each plane is H rows of ceil(W/8) bytes, pixel x in
//          bit (x % 8) of byte x / 8 (LSB first)
//   f32 quality[T]
//   u64 FNV-1a of every preceding byte
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kScanFormatVersion = 1;

struct ScanHeader {
  std::uint16_t version = kScanFormatVersion;
  std::uint32_t num_frames = 0;
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint8_t landmarks = 0;
  float fps = 0;
  std::uint32_t t_sp = 0;
  float years_experience = 0;
  std::uint32_t subject_id = 0;
  std::uint32_t sonographer_id = 0;
};

std::vector<std::uint8_t> encode_scan(const Scan& scan);
Scan decode_scan(std::span<const std::uint8_t> bytes);
void write_scan(const Scan& scan, const std::filesystem::path& path);
Scan read_scan(const std::filesystem::path& path);
/// Reads only the fixed-size header.
ScanHeader read_scan_header(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Sequences
// ---------------------------------------------------------------------------

struct SequenceSample {
  std::size_t scan_index = 0;
  std::uint32_t start = 0;
  std::uint32_t tau = 0;
  std::uint32_t stride = 1;

  std::uint32_t span() const { return stride * (tau - 1) + 1; }
  std::uint32_t frame(std::uint32_t j) const { return start + stride * j; }
};

/// Uniform start over every feasible window. ContractError when no window fits.
SequenceSample sample_sequence(const Scan& scan, std::uint64_t seed, std::uint32_t tau, std::uint32_t stride);

enum class Split { kTask, kSkill, kTest };
const char* split_name(Split split);
Split parse_split(const std::string& name);

/// Network-ready window: per-frame standardized frames (tau,H,W), binary
/// targets (tau*L,H,W) and bookkeeping for split and oracle checks.
struct Sequence {
  Tensor frames;
  Tensor targets;
  SequenceSample sample;
  Split split = Split::kTask;
  std::uint32_t subject_id = 0;
  std::uint32_t sonographer_id = 0;
  Real mean_quality = 0;
};

Sequence make_sequence(const Scan& scan, const SequenceSample& sample, Split split = Split::kTask);

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string path;  // relative to the corpus root
  std::uint32_t subject_id = 0;
  std::uint32_t sonographer_id = 0;
  Split split = Split::kTask;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Text manifest: '#'-prefixed header lines (seed and generator params), then
/// one `path TAB subject_id TAB sonographer_id TAB split` line per scan.
struct CorpusManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;
  GeneratorParams params;

  /// No subject or sonographer appears in two splits.
  void validate() const;
  std::size_t count(Split split) const;
  std::string to_text() const;
  static CorpusManifest parse(const std::string& text);
};

struct SplitCounts {
  std::size_t task = 0;
  std::size_t skill = 0;
  std::size_t test = 0;
};

inline constexpr const char* kManifestFile = "manifest.tsv";

/// Generates scans for the three splits with disjoint operator pools and
/// writes them plus the manifest under `dir`.
CorpusManifest make_corpus(std::uint64_t seed, const SplitCounts& counts, const GeneratorParams& params,
                           const std::filesystem::path& dir, std::size_t threads = 1);

struct Corpus {
  std::filesystem::path root;
  CorpusManifest manifest;
  std::vector<Scan> scans;  // parallel to manifest.entries

  std::vector<std::size_t> indices(Split split) const;
};

Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace bsl
