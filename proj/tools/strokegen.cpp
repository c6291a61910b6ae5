#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "strokegen.hpp"

using namespace strokegen;
namespace fs = std::filesystem;

namespace {

// STROKEGEN_LOG=quiet silences progress records on stderr; --log files are
// always written.
bool quiet() {
  const char* v = std::getenv("STROKEGEN_LOG");
  return v && std::string(v) == "quiet";
}

class LogSink {
 public:
  explicit LogSink(const std::string& path) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw InvalidArgument("cannot open log file " + path);
    }
  }
  JsonLog log() {
    if (file_) return JsonLog(file_.get());
    return JsonLog(quiet() ? nullptr : &std::cerr);
  }

 private:
  std::unique_ptr<std::ofstream> file_;
};

struct ConfigFlags {
  std::string profile = "toy";
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--profile", f.profile, "Configuration profile")->check(CLI::IsMember({"toy", "full"}));
  cmd->add_option("--config", f.config_path, "JSON run config; its values override flags")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Random seed");
}

/// Profile defaults, then flags via `apply_flags`, then the config file.
template <class F>
RunConfig resolve_config(const ConfigFlags& f, F&& apply_flags) {
  std::optional<nlohmann::json> file;
  std::string profile = f.profile;
  if (!f.config_path.empty()) {
    file = RunConfig::read_file(f.config_path);
    profile = RunConfig::profile_of(*file, profile);
  }
  RunConfig cfg = RunConfig::for_profile(profile);
  if (f.seed) cfg.seed = cfg.pretrain.seed = cfg.train.seed = *f.seed;
  apply_flags(cfg);
  if (file) cfg.apply(*file);
  cfg.validate();
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidArgument("cannot open " + path + " for writing");
  os << text;
  if (!os) throw InvalidArgument("failed writing " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidArgument("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// A layout file holds either the box array or an object with "layout".
WordLayout read_layout(const std::string& path) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("layout file is not valid JSON: ") + e.what());
  }
  if (j.is_object()) {
    if (!j.contains("layout")) throw ValidationError("layout object has no \"layout\" field");
    j = j["layout"];
  }
  WordLayout l = layout_from_json(j);
  validate_layout(l);
  return l;
}

RasterImage style_image_for(const std::string& path, const MultiScaleConfig& cfg) {
  RasterImage img = read_pgm(path);
  if (img.channels != cfg.channels) img = to_grayscale(img);
  if (img.height != cfg.full.height || img.width != cfg.full.width)
    img = resize_bilinear(img, cfg.full.height, cfg.full.width);
  return img;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stroke-level handwriting generation conditioned on style, text and word layout"};
  app.require_subcommand(1);
  std::string log_path;
  app.add_option("--log", log_path, "Write JSON-lines progress records to this file");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-writer dataset");
  int writers = 5, per_writer = 200;
  std::uint64_t data_seed = 7;
  std::string gen_out, gen_config;
  gen->add_option("--writers", writers, "Number of writers")->check(CLI::PositiveNumber);
  gen->add_option("--per-writer", per_writer, "Samples per writer")->check(CLI::PositiveNumber);
  gen->add_option("--seed", data_seed, "Random seed");
  gen->add_option("--out", gen_out, "Output JSON-lines file")->required();
  gen->add_option("--config", gen_config, "JSON run config; its data section overrides flags")->check(CLI::ExistingFile);

  // pretrain-style
  auto* pre = app.add_subcommand("pretrain-style", "Pretrain the style encoder on writer identification");
  ConfigFlags pre_flags;
  std::string pre_data, pre_out, pre_resume;
  std::optional<int> pre_epochs;
  add_config_flags(pre, pre_flags);
  pre->add_option("--data", pre_data, "Training dataset (JSON lines)")->required();
  pre->add_option("--out", pre_out, "Output checkpoint")->required();
  pre->add_option("--epochs", pre_epochs, "Number of epochs")->check(CLI::PositiveNumber);
  pre->add_option("--resume", pre_resume, "Continue from a pretraining checkpoint")->check(CLI::ExistingFile);

  // train
  auto* train = app.add_subcommand("train", "Train the diffusion model with a frozen style encoder");
  ConfigFlags train_flags;
  std::string train_data, train_style, train_out, train_resume, train_samples;
  std::optional<int> train_iters;
  bool ablate = false;
  add_config_flags(train, train_flags);
  train->add_option("--data", train_data, "Training dataset (JSON lines)")->required();
  train->add_option("--style", train_style, "Pretrained style-encoder checkpoint")->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Output checkpoint")->required();
  train->add_option("--iterations", train_iters, "Training iterations")->check(CLI::NonNegativeNumber);
  train->add_flag("--ablate-layout", ablate, "Zero and freeze the layout attention path");
  train->add_option("--resume", train_resume, "Continue from a diffusion checkpoint")->check(CLI::ExistingFile);
  train->add_option("--sample-dir", train_samples, "Directory for periodic sample renders");

  // sample
  auto* smp = app.add_subcommand("sample", "Generate strokes for a text, layout and style image");
  std::string ckpt_path, style_image, text, layout_path, sample_out, render_out;
  std::uint64_t sample_seed = 0;
  std::size_t length = 0;
  smp->add_option("--checkpoint", ckpt_path, "Trained diffusion checkpoint")->required()->check(CLI::ExistingFile);
  smp->add_option("--style-image", style_image, "Style reference image (PGM)")->required()->check(CLI::ExistingFile);
  smp->add_option("--text", text, "Text to write")->required();
  smp->add_option("--layout", layout_path, "Word layout JSON file")->required()->check(CLI::ExistingFile);
  smp->add_option("--seed", sample_seed, "Sampling seed");
  smp->add_option("--out", sample_out, "Output stroke file (JSON lines)")->required();
  smp->add_option("--render", render_out, "Also write a PGM render here");
  smp->add_option("--length", length, "Number of stroke points (default: predicted from the text)");
  std::string variance;
  smp->add_option("--variance", variance, "Sampling noise rule (default: the checkpoint's)")
      ->check(CLI::IsMember({"beta", "posterior", "zero"}));

  // eval
  auto* ev = app.add_subcommand("eval", "Score generated lines against references");
  std::string eval_gen, eval_ref, eval_out;
  EvalOptions eval_opt;
  ev->add_option("--generated", eval_gen, "Generated stroke file")->required()->check(CLI::ExistingFile);
  ev->add_option("--reference", eval_ref, "Reference stroke file")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", eval_out, "Report path prefix; writes PREFIX.json and PREFIX.txt")->required();
  ev->add_option("--height", eval_opt.height, "Render height")->check(CLI::Range(11, 4096));
  ev->add_option("--width", eval_opt.width, "Render width")->check(CLI::Range(11, 32768));
  ev->add_option("--dilation", eval_opt.dilation, "Layout box dilation in line heights")->check(CLI::NonNegativeNumber);

  // render
  auto* rnd = app.add_subcommand("render", "Rasterize one record of a stroke file");
  std::string render_in, render_path;
  std::size_t render_index = 0;
  int render_h = 64, render_w = 512;
  rnd->add_option("--in", render_in, "Stroke file (JSON lines)")->required()->check(CLI::ExistingFile);
  rnd->add_option("--index", render_index, "Record index");
  rnd->add_option("--out", render_path, "Output PGM")->required();
  rnd->add_option("--height", render_h, "Image height")->check(CLI::PositiveNumber);
  rnd->add_option("--width", render_w, "Image width")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    LogSink sink(log_path);
    JsonLog log = sink.log();

    if (*gen) {
      DataConfig d{writers, per_writer, data_seed};
      if (!gen_config.empty()) {
        RunConfig c = RunConfig::for_profile(RunConfig::profile_of(RunConfig::read_file(gen_config)));
        c.data = d;
        c.apply(RunConfig::read_file(gen_config));
        d = c.data;
      }
      const auto samples = generate_synthetic(d.writers, d.per_writer, default_vocab(), d.seed);
      save_samples(gen_out, samples);
      log.write({{"event", "gen_data"}, {"samples", samples.size()}, {"out", gen_out}});
    } else if (*pre) {
      const RunConfig cfg = resolve_config(pre_flags, [&](RunConfig& c) {
        if (pre_epochs) c.pretrain.epochs = *pre_epochs;
      });
      const auto samples = load_samples(pre_data);
      if (samples.empty()) throw InvalidArgument("dataset " + pre_data + " is empty");
      std::optional<Checkpoint> resume;
      if (!pre_resume.empty()) resume = Checkpoint::load(pre_resume);
      StyleEncoder enc = resume ? style_encoder_from(*resume) : StyleEncoder(cfg.model.style, writer_count(samples), cfg.seed);
      WriterIdTrainer tr(enc, cfg.pretrain);
      if (resume) restore_style_trainer(*resume, tr, enc);
      const auto data = writer_id_data(samples, enc.config());
      const auto history = tr.fit(data, [&](const PretrainRecord& r) { log.write(to_json(r)); });
      style_checkpoint(enc, &tr).save(pre_out);
      const double acc = history.empty() ? 0.0 : history.back().val_accuracy;
      log.write({{"event", "pretrain_done"}, {"val_accuracy", acc}, {"out", pre_out}});
    } else if (*train) {
      const RunConfig base = resolve_config(train_flags, [&](RunConfig& c) {
        if (train_iters) c.train.iterations = *train_iters;
        if (ablate) c.model.ablate_layout = true;
      });
      const auto samples = load_samples(train_data);
      if (samples.empty()) throw InvalidArgument("dataset " + train_data + " is empty");
      RunConfig cfg = base;
      std::optional<Checkpoint> resume;
      std::unique_ptr<diffusion::StrokeDiffusionModel> model;
      std::optional<StyleEncoder> style;
      if (!train_resume.empty()) {
        resume = Checkpoint::load(train_resume);
        auto loaded = diffusion_model_from(*resume);
        model = std::move(loaded.model);
        style.emplace(std::move(loaded.style));
        cfg.model = model->config();
      } else {
        if (train_style.empty()) throw InvalidArgument("train needs --style or --resume");
        style.emplace(style_encoder_from(Checkpoint::load(train_style)));
        cfg.model.style = style->config();
        cfg.model.text.style_dim = style->config().dim;
        model = std::make_unique<diffusion::StrokeDiffusionModel>(cfg.model, Vocab(), cfg.seed);
      }
      diffusion::DiffusionTrainer trainer(*model, *style, samples, cfg.train);
      if (resume) restore_diffusion_trainer(*resume, trainer, *model);
      log.write({{"event", "train_start"},
                 {"parameters", model->params().scalar_count()},
                 {"ablate_layout", model->config().ablate_layout},
                 {"step", trainer.step()}});
      const auto partners = same_writer_partners(samples);
      auto dump = [&](long step) {
        if (train_samples.empty()) return;
        fs::create_directories(train_samples);
        const auto& s = samples.front();
        const auto feats = style->encode(render_style_image(samples[partners[0]].strokes, style->config()));
        const auto out = model->sample(s.text, s.layout, feats, static_cast<std::uint64_t>(step));
        write_pgm(render(out, 64, 512, default_line_width(64)),
                  (fs::path(train_samples) / ("step" + std::to_string(step) + ".pgm")).string());
      };
      auto save = [&](long step) {
        diffusion_checkpoint(*model, *style, &trainer).save(train_out);
        log.write({{"event", "checkpoint"}, {"step", step}, {"out", train_out}});
      };
      const auto res = train_diffusion(trainer, cfg, log, save, dump);
      diffusion_checkpoint(*model, *style, &trainer).save(train_out);
      nlohmann::ordered_json done{{"event", "train_done"}, {"step", trainer.step()}, {"seconds", res.seconds}};
      if (res.stroke_losses.size() >= 100) {
        done["smoothed_stroke_100"] = smoothed(res.stroke_losses, 100);
        done["smoothed_stroke_final"] = smoothed(res.stroke_losses, res.stroke_losses.size());
      }
      log.write(done);
    } else if (*smp) {
      const auto loaded = diffusion_model_from(Checkpoint::load(ckpt_path));
      if (!variance.empty()) {
        const auto& mc = loaded.model->config();
        loaded.model->set_schedule(diffusion::make_schedule(mc.steps, mc.schedule, diffusion::parse_variance(variance)));
      }
      const WordLayout layout = read_layout(layout_path);
      Sample s;
      s.text = text;
      s.layout = layout;
      validate_text(text);
      if (layout_text(layout) != text && split_words(text).size() == layout.size())
        throw ValidationError("layout words \"" + layout_text(layout) + "\" do not match --text \"" + text + "\"");
      const auto feats = loaded.style.encode(style_image_for(style_image, loaded.style.config()));
      s.strokes = loaded.model->sample(text, layout, feats, sample_seed, length);
      validate_sample(s);
      save_samples(sample_out, {s});
      if (!render_out.empty()) write_pgm(render(s.strokes, 64, 512, default_line_width(64)), render_out);
      log.write({{"event", "sample"}, {"points", s.strokes.size()}, {"adherence", layout_adherence(s.strokes, layout)}});
    } else if (*ev) {
      const auto g = load_samples(eval_gen);
      const auto r = load_samples(eval_ref);
      const MetricReport rep = evaluate(g, r, eval_opt);
      write_text(eval_out + ".json", rep.to_json().dump(2) + "\n");
      write_text(eval_out + ".txt", rep.to_key_value());
      log.write({{"event", "eval"}, {"report", rep.to_json()}});
    } else if (*rnd) {
      const auto samples = load_samples(render_in);
      if (render_index >= samples.size())
        throw InvalidArgument("index " + std::to_string(render_index) + " out of range (" +
                              std::to_string(samples.size()) + " records)");
      write_pgm(render(samples[render_index].strokes, render_h, render_w, default_line_width(render_h)), render_path);
    }
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
