#include "gsf/run_config.hpp"

#include <charconv>
#include <functional>
#include <limits>

#include <fmt/format.h>

#include "gsf/binary_io.hpp"
#include "gsf/error.hpp"

namespace gsf::cli {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(fmt::format("config: '{}' is not a valid value for {}", text, key));
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(fmt::format("config: '{}' is not a boolean for {}", text, key));
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <typename T>
Field field(const char* key, T RunConfig::*member) {
  Field f;
  f.key = key;
  f.get = [member](const RunConfig& c) {
    if constexpr (std::is_same_v<T, bool>) {
      return std::string(c.*member ? "true" : "false");
    } else {
      return fmt::format("{}", c.*member);
    }
  };
  f.set = [member, key](RunConfig& c, std::string_view v) {
    if constexpr (std::is_same_v<T, std::string>) {
      c.*member = std::string(v);
    } else if constexpr (std::is_same_v<T, bool>) {
      c.*member = parse_bool(key, v);
    } else {
      c.*member = parse_number<T>(key, v);
    }
  };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      field("height", &RunConfig::height),
      field("width", &RunConfig::width),
      field("levels", &RunConfig::levels),
      field("steps", &RunConfig::steps),
      field("hidden", &RunConfig::hidden),
      field("dataset", &RunConfig::dataset),
      field("synth_count", &RunConfig::synth_count),
      field("epochs", &RunConfig::epochs),
      field("batch_size", &RunConfig::batch_size),
      field("checkpoint_interval", &RunConfig::checkpoint_interval),
      field("learning_rate", &RunConfig::learning_rate),
      field("dequantize", &RunConfig::dequantize),
      field("grad_clip", &RunConfig::grad_clip),
      field("assessor_epochs", &RunConfig::assessor_epochs),
      field("generated_count", &RunConfig::generated_count),
      field("assessor_lr", &RunConfig::assessor_lr),
      field("epsilon", &RunConfig::epsilon),
      field("thresh", &RunConfig::thresh),
      field("delta", &RunConfig::delta),
      field("n", &RunConfig::n),
      field("max_step", &RunConfig::max_step),
      field("plan", &RunConfig::plan),
      field("channel", &RunConfig::channel),
      field("plans", &RunConfig::plans),
      field("channels", &RunConfig::channels),
      field("sources", &RunConfig::sources),
      field("trials", &RunConfig::trials),
      field("stego_count", &RunConfig::stego_count),
      field("payload_bits", &RunConfig::payload_bits),
      field("seed", &RunConfig::seed),
      field("out", &RunConfig::out),
      field("checkpoint", &RunConfig::checkpoint),
      field("assessor", &RunConfig::assessor),
      field("latent", &RunConfig::latent),
      field("payload", &RunConfig::payload),
      field("image", &RunConfig::image),
      field("meta", &RunConfig::meta),
      field("reference", &RunConfig::reference),
  };
  return all;
}

std::vector<std::string> split_list(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      const auto item = trim(s.substr(start, i - start));
      if (!item.empty()) out.emplace_back(item);
      start = i + 1;
    }
  }
  return out;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  }
  throw ConfigError(fmt::format("config: unknown key '{}'", key));
}

void RunConfig::merge_text(std::string_view text, std::string_view origin) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value'", origin, line_no));
    }
    try {
      set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", origin, line_no, e.what()));
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const FormatError&) {
    throw ConfigError(fmt::format("cannot read config file {}", path.string()));
  }
  merge_text(text, path.string());
}

void RunConfig::validate() const {
  flow_config().validate();
  train_config().validate();
  opt_config().validate();
  assessor_config().validate();
  bit_plan();
  channel_kind();
  table_config().validate();
  if (synth_count == 0) throw ConfigError("config: synth_count must be >= 1");
  if (epochs == 0 && checkpoint_interval > 0) throw ConfigError("config: checkpoint_interval needs epochs >= 1");
  if (!(delta > 0.0f)) throw ConfigError("config: delta must be > 0");
  if (stego_count < 4) throw ConfigError("config: stego_count must be >= 4");
  if (generated_count == 0) throw ConfigError("config: generated_count must be >= 1");
  if (out.empty()) throw ConfigError("config: out must name a directory");
}

std::string RunConfig::to_text() const {
  std::string text;
  for (const auto& f : fields()) text += fmt::format("{} = {}\n", f.key, f.get(*this));
  return text;
}

flow::FlowConfig RunConfig::flow_config() const { return {height, width, levels, steps, hidden}; }

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.learning_rate = learning_rate;
  t.seed = derive_seed(seed, 20);
  t.checkpoint_interval = checkpoint_interval;
  if (checkpoint_interval > 0) t.checkpoint_path = std::filesystem::path(out) / "checkpoint.gsfw";
  t.dequantize = dequantize;
  t.grad_clip = grad_clip;
  return t;
}

opt::OptConfig RunConfig::opt_config() const { return {epsilon, max_step, thresh, n}; }

opt::AssessorTrainConfig RunConfig::assessor_config() const {
  opt::AssessorTrainConfig a;
  a.epochs = assessor_epochs;
  a.learning_rate = assessor_lr;
  a.seed = derive_seed(seed, 30);
  return a;
}

codec::BitPlan RunConfig::bit_plan() const { return codec::BitPlan::parse(plan); }

channel::ChannelKind RunConfig::channel_kind() const { return channel::parse_channel(channel); }

exp::TableConfig RunConfig::table_config() const {
  exp::TableConfig t;
  if (trim(plans) == "default") {
    t.plans = exp::default_plans();
  } else {
    for (const auto& p : split_list(plans, ';')) t.plans.push_back(codec::BitPlan::parse(p));
  }
  for (const auto& c : split_list(channels, ',')) t.channels.push_back(channel::parse_channel(c));
  for (const auto& s : split_list(sources, ',')) t.sources.push_back(exp::parse_source(s));
  t.trials = trials;
  t.seed = derive_seed(seed, 40);
  t.delta = delta;
  return t;
}

}  // namespace gsf::cli
