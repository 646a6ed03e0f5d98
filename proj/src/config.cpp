#include "bsl/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "bsl/binary_io.hpp"
#include "bsl/errors.hpp"

namespace bsl {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": cannot parse '" + v + "' as a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>) {
      s += format_real(v[i]);
    } else {
      s += std::to_string(v[i]);
    }
  }
  return s;
}

std::string real_text(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define BSL_UINT(KEY, EXPR)                                                                                    \
  Field {                                                                                                     \
    KEY, [](const RunConfig& c) { return std::to_string(c.EXPR); },                                           \
        [](RunConfig& c, const std::string& k, const std::string& v) {                                        \
          c.EXPR = static_cast<std::remove_reference_t<decltype(c.EXPR)>>(parse_number<std::uint64_t>(k, v)); \
        }                                                                                                     \
  }
#define BSL_REAL(KEY, EXPR)                                                                                \
  Field {                                                                                                 \
    KEY, [](const RunConfig& c) { return real_text(c.EXPR); },                                            \
        [](RunConfig& c, const std::string& k, const std::string& v) {                                    \
          c.EXPR = static_cast<std::remove_reference_t<decltype(c.EXPR)>>(parse_number<double>(k, v));     \
        }                                                                                                 \
  }
#define BSL_BOOL(KEY, EXPR)                                                                                       \
  Field {                                                                                                        \
    KEY, [](const RunConfig& c) { return std::string(c.EXPR ? "true" : "false"); },                               \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.EXPR = parse_bool(k, v); }              \
  }
#define BSL_PATH(KEY, EXPR)                                                                                 \
  Field {                                                                                                  \
    KEY, [](const RunConfig& c) { return c.EXPR.string(); },                                               \
        [](RunConfig& c, const std::string&, const std::string& v) { c.EXPR = v; }                         \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      BSL_UINT("run.seed", seed),
      BSL_UINT("run.threads", threads),
      BSL_PATH("run.out", out),
      BSL_PATH("run.data", data),
      BSL_PATH("run.checkpoint_dir", run),
      BSL_UINT("data.task_scans", scans.task),
      BSL_UINT("data.skill_scans", scans.skill),
      BSL_UINT("data.test_scans", scans.test),
      BSL_UINT("data.frames", generator.frames),
      BSL_UINT("data.height", generator.height),
      BSL_UINT("data.width", generator.width),
      BSL_REAL("data.fps", generator.fps),
      BSL_REAL("data.noise_sigma", generator.noise_sigma),
      BSL_UINT("model.segmenter_channels", model.segmenter.base_channels),
      BSL_UINT("model.segmenter_depth", model.segmenter.depth),
      BSL_UINT("model.regressor_channels", model.regressor.base_channels),
      BSL_UINT("model.regressor_depth", model.regressor.depth),
      BSL_UINT("train.epochs", trainer.epochs),
      BSL_UINT("train.steps_per_epoch", trainer.steps_per_epoch),
      BSL_UINT("train.minibatch", trainer.minibatch),
      BSL_REAL("train.lr_task", trainer.lr_task),
      BSL_REAL("train.lr_skill", trainer.lr_skill),
      BSL_REAL("train.clip_norm", trainer.clip_norm),
      Field{"train.norm", [](const RunConfig& c) { return to_string(c.trainer.norm); },
            [](RunConfig& c, const std::string&, const std::string& v) { c.trainer.norm = parse_norm(v); }},
      Field{"train.ltheta",
            [](const RunConfig& c) {
              switch (c.trainer.ltheta.kind) {
                case LthetaKind::kMin: return std::string("min");
                case LthetaKind::kAvg: return std::string("avg");
                case LthetaKind::kTopM: return std::string("top_m");
              }
              return std::string();
            },
            [](RunConfig& c, const std::string&, const std::string& v) {
              c.trainer.ltheta.kind = parse_ltheta(v, c.trainer.ltheta.m_percent).kind;
            }},
      BSL_REAL("train.m_percent", trainer.ltheta.m_percent),
      BSL_UINT("train.tau", trainer.tau),
      BSL_UINT("train.stride", trainer.stride),
      BSL_UINT("train.warmup_epochs", trainer.warmup_epochs),
      BSL_UINT("train.selection_after_epoch", trainer.selection_after_epoch),
      BSL_UINT("train.selection_windows", trainer.selection_windows),
      BSL_BOOL("train.raw_loss_target", trainer.raw_loss_target),
      BSL_BOOL("train.uniform_weights", trainer.uniform_weights),
      Field{"eval.split", [](const RunConfig& c) { return std::string(split_name(c.eval_split)); },
            [](RunConfig& c, const std::string&, const std::string& v) { c.eval_split = parse_split(v); }},
      BSL_REAL("eval.threshold", eval_threshold),
      Field{"meta.fractions", [](const RunConfig& c) { return join(c.meta_fractions); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.meta_fractions.clear();
              for (const auto& item : split_list(v)) c.meta_fractions.push_back(parse_number<double>(k, item));
            }},
      Field{"meta.epochs", [](const RunConfig& c) { return join(c.meta_epochs); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.meta_epochs.clear();
              for (const auto& item : split_list(v)) c.meta_epochs.push_back(parse_number<std::size_t>(k, item));
            }},
      BSL_UINT("meta.steps_per_epoch", meta_steps_per_epoch),
      BSL_UINT("baseline.epochs", baseline_epochs),
      BSL_PATH("trace.skill_checkpoint", trace_skill_checkpoint),
  };
  return table;
}

#undef BSL_UINT
#undef BSL_REAL
#undef BSL_BOOL
#undef BSL_PATH

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      try {
        f.set(*this, key, trim(value));
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError(key + ": " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply_text(const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'section.key = value'");
    }
    try {
      set(trim(std::string_view(line).substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = io::read_file(path.string());
  } catch (const Error& e) {
    throw ConfigError("cannot read config file " + path.string() + ": " + e.what());
  }
  apply_text(std::string(bytes.begin(), bytes.end()), path.string());
}

ModelSpec RunConfig::model_spec() const {
  ModelSpec m = model;
  m.segmenter.in_frames = m.regressor.in_frames = trainer.tau;
  m.segmenter.height = m.regressor.height = generator.height;
  m.segmenter.width = m.regressor.width = generator.width;
  m.segmenter.landmarks = kNumLandmarks;
  return m;
}

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("run.threads must be at least 1");
  generator.validate();
  const ModelSpec m = model_spec();
  m.segmenter.validate();
  m.regressor.validate();
  trainer_config().validate();
  if (trainer.stride * (trainer.tau - 1) + 1 > generator.frames) {
    throw ConfigError("a window of train.tau frames at train.stride does not fit in data.frames");
  }
  if (!(eval_threshold > 0 && eval_threshold < 1)) throw ConfigError("eval.threshold must lie in (0, 1)");
  for (Real f : meta_fractions) {
    if (!(f > 0 && f < 1)) throw ConfigError("meta.fractions entries must lie in (0, 1)");
  }
  if (meta_steps_per_epoch < 1) throw ConfigError("meta.steps_per_epoch must be at least 1");
}

std::string RunConfig::to_text() const {
  std::string s = "# resolved run configuration\n";
  for (const auto& f : fields()) s += std::string(f.key) + " = " + f.get(*this) + '\n';
  return s;
}

TrainerConfig RunConfig::trainer_config() const {
  TrainerConfig t = trainer;
  t.seed = seed;
  t.threads = threads;
  return t;
}

EvalConfig RunConfig::eval_config() const {
  EvalConfig e = eval_config_from(trainer_config());
  e.threshold = eval_threshold;
  return e;
}

}  // namespace bsl
