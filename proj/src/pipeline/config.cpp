#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "birdast/error.hpp"
#include "birdast/pipeline.hpp"

namespace birdast::pipeline {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = first + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw Error(Errc::Config, key + ": cannot parse '" + text + "'");
  }
  return v;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

template <typename T>
Field size_field(T RunConfig::*outer, std::size_t T::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*outer).*member = parse_number<std::size_t>(k, v);
          },
          [=](const RunConfig& c) { return std::to_string((c.*outer).*member); }};
}

template <typename T>
Field double_field(T RunConfig::*outer, double T::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*outer).*member = parse_number<double>(k, v);
          },
          [=](const RunConfig& c) { return num((c.*outer).*member); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"run.out", {[](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; },
                   [](const RunConfig& c) { return c.out_dir.string(); }}},
      {"run.seed", {[](RunConfig& c, const std::string& k, const std::string& v) {
                      c.seed = parse_number<std::uint64_t>(k, v);
                    },
                    [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"run.model", {[](RunConfig& c, const std::string&, const std::string& v) { c.model = v; },
                     [](const RunConfig& c) { return c.model; }}},
      {"run.threads", {[](RunConfig& c, const std::string& k, const std::string& v) {
                         c.threads = parse_number<std::size_t>(k, v);
                       },
                       [](const RunConfig& c) { return std::to_string(c.threads); }}},
      {"data.root", {[](RunConfig& c, const std::string&, const std::string& v) { c.data_root = v; },
                     [](const RunConfig& c) { return c.data_root.string(); }}},
      {"data.cap", {[](RunConfig& c, const std::string& k, const std::string& v) {
                      c.cap = parse_number<std::size_t>(k, v);
                    },
                    [](const RunConfig& c) { return std::to_string(c.cap); }}},
      {"data.val_fraction", {[](RunConfig& c, const std::string& k, const std::string& v) {
                               c.val_fraction = parse_number<double>(k, v);
                             },
                             [](const RunConfig& c) { return num(c.val_fraction); }}},
      {"data.window_seconds", double_field(&RunConfig::segments, &audio::SegmentOptions::window_seconds)},
      {"data.hop_seconds", double_field(&RunConfig::segments, &audio::SegmentOptions::hop_seconds)},
      {"mel.n_mels", size_field(&RunConfig::mel, &dsp::MelParams::n_mels)},
      {"mel.f_min", double_field(&RunConfig::mel, &dsp::MelParams::f_min)},
      {"mel.f_max", double_field(&RunConfig::mel, &dsp::MelParams::f_max)},
      {"mel.sample_rate", {[](RunConfig& c, const std::string& k, const std::string& v) {
                             c.mel.sample_rate = parse_number<int>(k, v);
                           },
                           [](const RunConfig& c) { return std::to_string(c.mel.sample_rate); }}},
      {"mel.n_fft", size_field(&RunConfig::mel, &dsp::MelParams::n_fft)},
      {"mel.hop_length", size_field(&RunConfig::mel, &dsp::MelParams::hop_length)},
      {"mel.top_db", double_field(&RunConfig::mel, &dsp::MelParams::top_db)},
      {"ast.patch_size", size_field(&RunConfig::ast, &model::AstConfig::patch_size)},
      {"ast.patch_stride", size_field(&RunConfig::ast, &model::AstConfig::patch_stride)},
      {"ast.embed_dim", size_field(&RunConfig::ast, &model::AstConfig::embed_dim)},
      {"ast.n_layers", size_field(&RunConfig::ast, &model::AstConfig::n_layers)},
      {"ast.n_heads", size_field(&RunConfig::ast, &model::AstConfig::n_heads)},
      {"ast.mlp_ratio", size_field(&RunConfig::ast, &model::AstConfig::mlp_ratio)},
      {"ast.init_std", double_field(&RunConfig::ast, &model::AstConfig::init_std)},
      {"ast.input_center", double_field(&RunConfig::ast, &model::AstConfig::input_center)},
      {"cnn.stem_channels", size_field(&RunConfig::cnn, &model::CnnConfig::stem_channels)},
      {"cnn.head_channels", size_field(&RunConfig::cnn, &model::CnnConfig::head_channels)},
      {"cnn.blocks", {[](RunConfig& c, const std::string&, const std::string& v) {
                        c.cnn.blocks = model::parse_blocks(v);
                      },
                      [](const RunConfig& c) { return model::format_blocks(c.cnn.blocks); }}},
      {"train.learning_rate", double_field(&RunConfig::train, &train::TrainConfig::learning_rate)},
      {"train.total_epochs", size_field(&RunConfig::train, &train::TrainConfig::total_epochs)},
      {"train.train_batch", size_field(&RunConfig::train, &train::TrainConfig::train_batch)},
      {"train.val_batch", size_field(&RunConfig::train, &train::TrainConfig::val_batch)},
      {"train.patience", size_field(&RunConfig::train, &train::TrainConfig::patience)},
      {"train.eta_min", double_field(&RunConfig::train, &train::TrainConfig::eta_min)},
      {"train.monitor", {[](RunConfig& c, const std::string& k, const std::string& v) {
                           if (v == "val_loss") c.train.monitor = train::Monitor::ValLoss;
                           else if (v == "val_macro_f1") c.train.monitor = train::Monitor::ValMacroF1;
                           else throw Error(Errc::Config, k + " must be val_loss or val_macro_f1");
                         },
                         [](const RunConfig& c) {
                           return std::string(c.train.monitor == train::Monitor::ValLoss ? "val_loss"
                                                                                          : "val_macro_f1");
                         }}},
      {"synth.classes", {[](RunConfig& c, const std::string& k, const std::string& v) {
                           c.synth_classes = parse_number<std::size_t>(k, v);
                         },
                         [](const RunConfig& c) { return std::to_string(c.synth_classes); }}},
      {"synth.clips", {[](RunConfig& c, const std::string& k, const std::string& v) {
                         c.synth_clips = parse_number<std::size_t>(k, v);
                       },
                       [](const RunConfig& c) { return std::to_string(c.synth_clips); }}},
      {"predict.topk", {[](RunConfig& c, const std::string& k, const std::string& v) {
                          c.topk = parse_number<std::size_t>(k, v);
                        },
                        [](const RunConfig& c) { return std::to_string(c.topk); }}},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  if (model != "ast" && model != "cnn") throw Error(Errc::Config, "run.model must be ast or cnn");
  if (cap == 0) throw Error(Errc::Config, "data.cap must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw Error(Errc::Config, "data.val_fraction must be in (0, 1)");
  if (!(segments.window_seconds > 0.0) || !(segments.hop_seconds > 0.0)) {
    throw Error(Errc::Config, "segment window and hop must be positive");
  }
  if (topk == 0) throw Error(Errc::Config, "predict.topk must be >= 1");
  if (synth_classes < 2) throw Error(Errc::Config, "synth.classes must be >= 2");
  if (synth_clips == 0) throw Error(Errc::Config, "synth.clips must be >= 1");
  try {
    mel.validate();
  } catch (const Error& e) {
    throw Error(Errc::Config, e.what());
  }
  train.validate();
  model::AstConfig a = ast;
  a.image_size = dsp::kImageSize;
  a.validate();
  model::CnnConfig c = cnn;
  c.image_size = dsp::kImageSize;
  c.validate();
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw Error(Errc::Config, "unknown setting '" + key + "'");
  try {
    it->second.set(cfg, key, value);
  } catch (const Error& e) {
    if (e.code() == Errc::Config) throw;
    throw Error(Errc::Config, key + ": " + e.what());
  }
}

std::string get_setting(const RunConfig& cfg, const std::string& key) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw Error(Errc::Config, "unknown setting '" + key + "'");
  return it->second.get(cfg);
}

void load_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Config, "cannot read config " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::Config, path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::string format_config(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& [key, field] : fields()) out << key << " = " << field.get(cfg) << '\n';
  return out.str();
}

}  // namespace birdast::pipeline
