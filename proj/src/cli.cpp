#include "gsf/cli.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "gsf/binary_io.hpp"
#include "gsf/dataset.hpp"
#include "gsf/error.hpp"
#include "gsf/image_io.hpp"

namespace gsf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path out_path(const RunConfig& c, const char* name) { return fs::path(c.out) / name; }

void write_text(const fs::path& path, const std::string& text) { io::write_file_atomic(path, text); }

void write_provenance(const RunConfig& c) { write_text(out_path(c, "config.resolved.txt"), c.to_text()); }

data::Dataset load_dataset(const RunConfig& c, const char* command) {
  if (c.dataset.empty()) {
    throw ConfigError(fmt::format("{}: no dataset given; pass --dataset <dir> or --dataset synthetic", command));
  }
  if (c.dataset == "synthetic") return data::synth_dataset(derive_seed(c.seed, 50), c.synth_count, c.height, c.width);
  return data::ingest_images(c.dataset, c.height, c.width);
}

// Loads the checkpoint and adopts its model dims into the config.
flow::FlowModel load_model(RunConfig& c, const char* command) {
  if (c.checkpoint.empty()) throw ConfigError(fmt::format("{}: --checkpoint is required", command));
  auto model = flow::load_checkpoint(fs::path(c.checkpoint));
  const auto& m = model.config();
  c.height = m.height;
  c.width = m.width;
  c.levels = m.levels;
  c.steps = m.steps;
  c.hidden = m.hidden;
  return model;
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  const std::string s = io::read_file(path);
  return {s.begin(), s.end()};
}

json read_meta(const std::string& path) {
  if (path.empty()) {
    throw ConfigError("extract: stego metadata (--meta) is required; it carries the payload length in bits");
  }
  json meta;
  try {
    meta = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: invalid metadata: {}", path, e.what()));
  }
  if (!meta.contains("payload_bits") || !meta["payload_bits"].is_number_unsigned()) {
    throw FormatError(fmt::format("{}: metadata lacks an unsigned payload_bits field", path));
  }
  return meta;
}

// Model-domain (1,H,W,3) image from a .ppm (pixels) or .pfm (verbatim floats).
ad::Tensor load_image(const std::string& path) {
  const fs::path p(path);
  if (p.extension() == ".pfm") {
    auto r = io::read_pfm(p);
    return ad::Tensor({1, r.height, r.width, 3}, std::move(r.pixels));
  }
  if (p.extension() == ".ppm") {
    const auto r = io::read_ppm(p);
    ad::Tensor t({1, r.height, r.width, 3});
    for (std::size_t i = 0; i < r.pixels.size(); ++i) t.data()[i] = io::to_model_domain(r.pixels[i]);
    return t;
  }
  throw ConfigError(fmt::format("{}: image must be .ppm or .pfm", path));
}

io::RasterU8 to_raster_u8(const ad::Tensor& image) {
  io::RasterU8 r{image.dim(1), image.dim(2), {}};
  r.pixels.reserve(image.size());
  for (float v : image.data()) {
    const float p = std::clamp(std::nearbyint(io::to_pixel_domain(v)), 0.0f, 255.0f);
    r.pixels.push_back(static_cast<std::uint8_t>(p));
  }
  return r;
}

std::string loss_csv(const std::vector<train::LossPoint>& curve) {
  std::string s = "epoch,step,nll_bits_per_dim\n";
  for (const auto& p : curve) s += fmt::format("{},{},{:.6f}\n", p.epoch, p.step, p.nll_bits_per_dim);
  return s;
}

std::string trace_csv(const std::vector<opt::TracePoint>& trace) {
  std::string s = "step,diff,score_gen\n";
  for (const auto& p : trace) s += fmt::format("{},{:.6f},{:.6f}\n", p.step, p.diff, p.score_gen);
  return s;
}

}  // namespace

void cmd_train(const RunConfig& config, std::ostream& log) {
  const RunConfig& c = config;
  const auto ds = load_dataset(c, "train");
  write_provenance(c);
  flow::FlowModel model(c.flow_config(), derive_seed(c.seed, 10));
  const auto eval = ds.batch(data::Split::Eval);
  const bool has_eval = eval.dim(0) > 0;
  const double before = has_eval ? train::evaluate_bpd(model, eval) : std::nan("");
  const auto result = train::train(model, ds, c.train_config());
  const double after = has_eval ? train::evaluate_bpd(model, eval) : std::nan("");
  flow::save_checkpoint(model, out_path(c, "checkpoint.gsfw"));
  write_text(out_path(c, "loss.csv"), loss_csv(result.curve));
  log << fmt::format("trained {} steps on {} images from {}\n", result.steps, ds.indices(data::Split::Train).size(),
                     ds.source);
  if (has_eval) log << fmt::format("eval bits/dim: {:.4f} -> {:.4f}\n", before, after);
  log << fmt::format("wrote {}\n", out_path(c, "checkpoint.gsfw").string());
}

void cmd_optimize_latent(const RunConfig& config, std::ostream& log) {
  RunConfig c = config;
  const auto model = load_model(c, "optimize-latent");
  const auto ds = load_dataset(c, "optimize-latent");
  write_provenance(c);

  opt::QualityAssessor assessor(c.height, c.width, 0);
  if (!c.assessor.empty()) {
    assessor = opt::load_assessor(fs::path(c.assessor));
  } else {
    ad::Tensor generated;
    {
      ad::NoGradScope no_grad;
      Rng rng(derive_seed(c.seed, 60));
      generated = model.sample(c.delta, rng, c.generated_count).image;
    }
    auto trained = opt::train_assessor(ds.batch(data::Split::Train), generated, c.assessor_config());
    assessor = trained.assessor;
    opt::save_assessor(assessor, out_path(c, "assessor.gsfq"));
    log << fmt::format("assessor accuracy: train {:.4f}, held-out {:.4f} ({} images)\n", trained.report.train_accuracy,
                       trained.report.holdout_accuracy, trained.report.holdout_count);
  }

  auto pool = ds.indices(data::Split::Eval);
  if (pool.size() < c.n) {
    pool.resize(ds.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
  }
  if (pool.size() < c.n) throw ConfigError(fmt::format("optimize-latent: dataset has fewer than n={} images", c.n));
  Rng rng(derive_seed(c.seed, 70));
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(c.n);
  const auto result = opt::optimize_latent(model, assessor, ds.batch(pool), c.opt_config());

  codec::save_latent(result.latent, out_path(c, "latent.gsfz"));
  write_text(out_path(c, "diff_trace.csv"), trace_csv(result.trace));
  {
    ad::NoGradScope no_grad;
    io::write_ppm(out_path(c, "image.ppm"), to_raster_u8(model.inverse(result.latent)));
  }
  log << fmt::format("{} steps, diff {:.4f} -> {:.4f}{}{}\n", result.trace.size(),
                     result.trace.empty() ? 0.0 : result.trace.front().diff,
                     result.trace.empty() ? 0.0 : result.trace.back().diff, result.early_exit ? " (below thresh)" : "",
                     result.aborted ? " (aborted on non-finite gradient)" : "");
}

void cmd_embed(const RunConfig& config, std::ostream& log) {
  RunConfig c = config;
  const auto model = load_model(c, "embed");
  if (c.payload.empty()) throw ConfigError("embed: --payload <file> is required (an empty file embeds nothing)");
  write_provenance(c);
  const auto plan = c.bit_plan();
  const auto kind = c.channel_kind();

  flow::MultiScaleLatent z;
  if (!c.latent.empty()) {
    z = codec::load_latent(fs::path(c.latent));
    const auto shapes = model.latent_shapes();
    bool ok = z.levels.size() == shapes.size();
    for (std::size_t i = 0; ok && i < shapes.size(); ++i) {
      ok = z.levels[i].shape() == ad::Shape{1, shapes[i].height, shapes[i].width, shapes[i].channels};
    }
    if (!ok) throw ShapeError(fmt::format("embed: latent {} does not match the model's latent shapes", c.latent));
  } else {
    Rng rng(derive_seed(c.seed, 80));
    z.temperature = c.delta;
    for (const auto& s : model.latent_shapes()) z.levels.push_back(normal_tensor({1, s.height, s.width, s.channels}, rng, c.delta));
  }

  const auto bytes = read_bytes(c.payload);
  const auto payload = codec::Payload::from_bytes(bytes, c.payload_bits ? c.payload_bits : bytes.size() * 8);
  const auto stego = codec::embed(z, payload, plan);
  ad::Tensor image;
  {
    ad::NoGradScope no_grad;
    image = channel::apply_channel(model.inverse(stego), kind);
  }
  const char* image_name = kind == channel::ChannelKind::QuantizedU8 ? "stego.ppm" : "stego.pfm";
  if (kind == channel::ChannelKind::QuantizedU8) {
    io::write_ppm(out_path(c, image_name), to_raster_u8(image));
  } else {
    io::write_pfm(out_path(c, image_name), {c.height, c.width, image.values()});
  }
  const double bpp = static_cast<double>(payload.size()) / static_cast<double>(c.height * c.width);
  const json meta = {{"plan", plan.to_string()},   {"payload_bits", payload.size()}, {"channel", c.channel},
                     {"bpp", bpp},                 {"image", image_name},            {"height", c.height},
                     {"width", c.width},           {"latent_floats", z.element_count()}};
  write_text(out_path(c, "stego.json"), meta.dump(2) + "\n");
  if (payload.size() == 0) {
    log << fmt::format("0 bpp: plain image written to {}\n", out_path(c, image_name).string());
  } else {
    log << fmt::format("embedded {} bits ({:.4f} bpp, plan {}) into {}\n", payload.size(), bpp, plan.to_string(),
                       out_path(c, image_name).string());
  }
}

void cmd_extract(const RunConfig& config, std::ostream& log) {
  RunConfig c = config;
  const auto model = load_model(c, "extract");
  const json meta = read_meta(c.meta);
  if (c.image.empty()) throw ConfigError("extract: --image is required");
  write_provenance(c);
  const std::size_t bits = meta["payload_bits"].get<std::size_t>();
  const auto plan = c.bit_plan();

  const ad::Tensor image = load_image(c.image);
  if (image.dim(1) != c.height || image.dim(2) != c.width) {
    throw ShapeError(fmt::format("extract: image is {}x{} but the model expects {}x{}", image.dim(1), image.dim(2),
                                 c.height, c.width));
  }
  flow::MultiScaleLatent z;
  {
    ad::NoGradScope no_grad;
    z = model.forward(image).latent;
  }
  const auto payload = codec::extract(z, plan, bits);
  write_text(out_path(c, "extracted.bin"), [&] {
    const auto b = payload.to_bytes();
    return std::string(b.begin(), b.end());
  }());
  json report = {{"plan", plan.to_string()}, {"payload_bits", bits}};
  if (!c.reference.empty()) {
    const auto ref_bytes = read_bytes(c.reference);
    const auto reference = codec::Payload::from_bytes(ref_bytes, bits);
    const double a = channel::acc(reference, payload);
    report["acc"] = a;
    log << fmt::format("acc = {:.6f}\n", a);
  }
  write_text(out_path(c, "extracted.json"), report.dump(2) + "\n");
  log << fmt::format("extracted {} bits with plan {} to {}\n", bits, plan.to_string(),
                     out_path(c, "extracted.bin").string());
}

void cmd_evaluate(const RunConfig& config, std::ostream& log) {
  RunConfig c = config;
  const auto model = load_model(c, "evaluate");
  const auto table = c.table_config();
  const bool wants_optimized =
      std::find(table.sources.begin(), table.sources.end(), exp::LatentSource::Optimized) != table.sources.end();
  std::optional<exp::OptimizedSource> optimized;
  if (wants_optimized) {
    if (c.assessor.empty()) throw ConfigError("evaluate: the optimized source needs --assessor");
    const auto ds = load_dataset(c, "evaluate");
    auto refs = ds.indices(data::Split::Eval);
    if (refs.size() < c.n) {
      refs.resize(ds.size());
      std::iota(refs.begin(), refs.end(), std::size_t{0});
    }
    optimized = exp::OptimizedSource{opt::load_assessor(fs::path(c.assessor)), ds.batch(refs), c.opt_config()};
  }
  write_provenance(c);
  const auto rows = exp::run_table(model, table, optimized ? &*optimized : nullptr);
  write_text(out_path(c, "table.csv"), exp::table_csv(rows));

  const auto report = exp::run_steganalysis(model, {c.bit_plan(), c.channel_kind(), c.stego_count, derive_seed(c.seed, 90), c.delta});
  write_text(out_path(c, "pe.csv"), exp::pe_csv(report));
  write_text(out_path(c, "roc.csv"), exp::roc_csv(report));
  log << fmt::format("{} table rows -> {}\n", rows.size(), out_path(c, "table.csv").string());
  log << fmt::format("PE = {:.4f}, AUC = {:.4f} (plan {}, channel {})\n", report.pe, report.auc, c.plan, c.channel);
}

void cmd_steganalyze(const RunConfig& config, std::ostream& log) {
  RunConfig c = config;
  const auto model = load_model(c, "steganalyze");
  write_provenance(c);
  const auto report = exp::run_steganalysis(model, {c.bit_plan(), c.channel_kind(), c.stego_count, derive_seed(c.seed, 90), c.delta});
  write_text(out_path(c, "pe.csv"), exp::pe_csv(report));
  write_text(out_path(c, "roc.csv"), exp::roc_csv(report));
  log << fmt::format("PE = {:.4f}, AUC = {:.4f} (plan {}, channel {})\n", report.pe, report.auc, c.plan, c.channel);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Generative steganography workbench: Glow training, latent optimization and bit-plane embedding", "gsf"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> sets;
  // Flag name -> config key, applied after the config file and --set.
  std::map<std::string, std::string> flags;
  std::map<std::string, std::string> flag_values;

  struct Command {
    const char* name;
    const char* help;
    std::vector<std::pair<const char*, const char*>> options;  // flag, help
    void (*body)(const RunConfig&, std::ostream&);
  };
  const std::vector<Command> commands = {
      {"train", "Train a flow model and write checkpoint.gsfw and loss.csv", {{"dataset", "Image directory or 'synthetic'"}}, cmd_train},
      {"optimize-latent", "Optimize a latent against the quality assessor",
       {{"checkpoint", "Flow checkpoint"}, {"dataset", "Real images"}, {"assessor", "Pre-trained assessor (trained if absent)"}},
       cmd_optimize_latent},
      {"embed", "Embed a payload file into a generated stego image",
       {{"checkpoint", "Flow checkpoint"}, {"payload", "Payload file (raw bytes)"}, {"plan", "Bit plan, e.g. S,0:22 or 1,0,22"},
        {"channel", "u8 or float"}, {"latent", "Latent file (random latent if absent)"}},
       cmd_embed},
      {"extract", "Recover a payload from a stego image",
       {{"checkpoint", "Flow checkpoint"}, {"image", "Stego image (.ppm or .pfm)"}, {"meta", "Stego metadata JSON"},
        {"plan", "Override the plan recorded in the metadata"}, {"reference", "Reference payload for Acc"}},
       cmd_extract},
      {"evaluate", "Write the capacity/accuracy table and a PE report",
       {{"checkpoint", "Flow checkpoint"}, {"plan", "Plan for the PE report"}, {"channel", "Channel for the PE report"},
        {"assessor", "Assessor for the optimized source"}, {"dataset", "References for the optimized source"}},
       cmd_evaluate},
      {"steganalyze", "Train the residual steganalyzer and report held-out PE",
       {{"checkpoint", "Flow checkpoint"}, {"plan", "Bit plan"}, {"channel", "u8 or float"}},
       cmd_steganalyze},
  };

  std::map<std::string, CLI::App*> subs;
  for (const auto& cmd : commands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    subs[cmd.name] = sub;
    sub->add_option("--config", config_file, "Flat key = value config file");
    sub->add_option("--set", sets, "Override a config key (key=value), repeatable");
    sub->add_option("--seed", flag_values["seed"], "Random seed");
    sub->add_option("--out", flag_values["out"], "Output directory");
    for (const auto& [flag, help] : cmd.options) sub->add_option(fmt::format("--{}", flag), flag_values[flag], help);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const Command* chosen = nullptr;
  for (const auto& cmd : commands)
    if (subs[cmd.name]->parsed()) chosen = &cmd;

  try {
    RunConfig config;
    if (!config_file.empty()) config.merge_file(config_file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(fmt::format("--set '{}': expected key=value", s));
      config.set(s.substr(0, eq), s.substr(eq + 1));
    }
    auto* sub = subs[chosen->name];
    for (const char* key : {"seed", "out", "dataset", "checkpoint", "assessor", "payload", "plan", "channel", "latent",
                            "image", "meta", "reference"}) {
      const std::string flag = fmt::format("--{}", key);
      if (auto* opt = sub->get_option_no_throw(flag); opt && opt->count() > 0) config.set(key, flag_values[key]);
    }
    if (std::string(chosen->name) == "extract") {
      const bool plan_given = sub->get_option_no_throw("--plan")->count() > 0;
      const json meta = read_meta(config.meta);
      if (!plan_given && meta.contains("plan")) config.set("plan", meta["plan"].get<std::string>());
    }
    config.validate();
    chosen->body(config, out);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace gsf::cli
