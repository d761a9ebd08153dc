#include "featup/cli.hpp"

#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "featup/bench.hpp"
#include "featup/checkpoint.hpp"
#include "featup/io.hpp"
#include "featup/synth.hpp"
#include "featup/trainer.hpp"
#include "featup/viz.hpp"

namespace featup {

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kFileError = 3, kValueError = 4, kNumericError = 5 };

void require_file(const std::string& flag, const fs::path& p) {
  if (!fs::is_regular_file(p)) throw FormatError(flag + ": file not found: " + p.string());
}

void require_dir(const std::string& flag, const fs::path& p) {
  if (!fs::is_directory(p)) throw FormatError(flag + ": directory not found: " + p.string());
}

std::string trace_csv(const std::vector<double>& total, const std::vector<double>* recon) {
  std::ostringstream s;
  s.precision(17);
  s << (recon ? "step,loss,reconstruction\n" : "step,loss\n");
  for (std::size_t i = 0; i < total.size(); ++i) {
    s << i << ',' << total[i];
    if (recon) s << ',' << (*recon)[i];
    s << '\n';
  }
  return s.str();
}

ProgressFn progress_printer(int every, std::ostream& out) {
  if (every <= 0) return {};
  return [every, &out](int step, double loss) {
    if ((step + 1) % every == 0) out << "step " << step + 1 << " loss " << loss << "\n";
  };
}

struct TrainFlags {
  TrainConfig cfg;
  std::uint64_t view_seed = 0;
  std::string trace;
  int log_every = 0;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--steps", f.cfg.steps, "optimizer steps")->capture_default_str();
  cmd->add_option("--lr", f.cfg.lr, "learning rate")->capture_default_str();
  cmd->add_option("--kernel-size", f.cfg.kernel_size, "downsampler kernel size")->capture_default_str();
  cmd->add_option("--proj-dim", f.cfg.proj_dim, "feature compression dimension")->capture_default_str();
  cmd->add_option("--tv", f.cfg.tv_weight, "total-variation weight")->capture_default_str();
  cmd->add_option("--jitters", f.cfg.jitters, "views per image")->capture_default_str();
  cmd->add_option("--max-pad", f.cfg.max_pad, "largest jitter padding in pixels")->capture_default_str();
  cmd->add_option("--max-zoom", f.cfg.max_zoom, "largest jitter zoom")->capture_default_str();
  cmd->add_option("--seed", f.cfg.seed, "training seed")->capture_default_str();
  cmd->add_option("--clip", f.cfg.clip_norm, "global gradient norm limit")->capture_default_str();
  cmd->add_option("--trace", f.trace, "write the per-step loss trace as CSV");
  cmd->add_option("--log-every", f.log_every, "print the loss every N steps");
}

int cmd_synth(const SynthOptions& o, const fs::path& out_dir, std::ostream& out) {
  synth_generate(o, out_dir);
  out << "wrote " << o.count << " image(s) to " << out_dir.string() << "\n";
  return kOk;
}

int cmd_train_implicit(const TrainFlags& f, bool has_view_seed, const fs::path& image_path, const fs::path& views_dir,
                       const fs::path& out_path, std::ostream& out) {
  require_file("--image", image_path);
  require_dir("--views", views_dir);
  TrainConfig cfg = f.cfg;
  if (has_view_seed) cfg.view_seed = f.view_seed;
  const auto image = read_png(image_path);
  const DirectoryViewProvider views(views_dir);
  const auto model = train_implicit(image, views, cfg, progress_printer(f.log_every, out));
  save_checkpoint(model, out_path);
  if (!f.trace.empty()) write_file_atomic(f.trace, trace_csv(model.loss_trace, &model.reconstruction_trace));
  out << "wrote implicit checkpoint " << out_path.string() << "\n";
  return kOk;
}

int cmd_train_jbu(const TrainFlags& f, const fs::path& corpus_dir, const fs::path& out_path, std::ostream& out) {
  require_dir("--corpus", corpus_dir);
  const auto corpus = load_corpus(corpus_dir);
  const auto model = train_jbu(corpus, f.cfg, progress_printer(f.log_every, out));
  save_checkpoint(model, out_path);
  if (!f.trace.empty()) write_file_atomic(f.trace, trace_csv(model.loss_trace, nullptr));
  out << "wrote JBU checkpoint " << out_path.string() << " (" << model.stages.size() << " stages)\n";
  return kOk;
}

int cmd_upsample(const fs::path& ckpt, const fs::path& image_path, const std::string& features_path, int factor,
                 const fs::path& out_path, std::ostream& out) {
  require_file("--ckpt", ckpt);
  require_file("--image", image_path);
  if (factor < 1) throw ParameterError("--factor must be >= 1, got " + std::to_string(factor));
  const Model model = load_checkpoint(ckpt);
  const auto image = read_png(image_path);
  FeatureMap result;
  if (const auto* m = std::get_if<ImplicitModel>(&model)) {
    int h = m->feature_h, w = m->feature_w;
    if (!features_path.empty()) {
      require_file("--features", features_path);
      const auto fm = read_npy(features_path);
      h = fm.height();
      w = fm.width();
    }
    result = upsample(*m, image, h * factor, w * factor);
  } else {
    if (features_path.empty()) throw ParameterError("--features is required for a JBU checkpoint");
    require_file("--features", features_path);
    const auto fm = read_npy(features_path);
    result = upsample(std::get<JbuModel>(model), image, fm, fm.height() * factor, fm.width() * factor);
  }
  write_npy(result, out_path);
  out << "wrote " << result.channels() << "x" << result.height() << "x" << result.width() << " features to "
      << out_path.string() << "\n";
  return kOk;
}

int cmd_viz(const fs::path& lr, const fs::path& hr, const fs::path& out_path, std::ostream& out) {
  require_file("--lr", lr);
  require_file("--hr", hr);
  write_pca_visualization(read_npy(lr), read_npy(hr), out_path);
  out << "wrote " << out_path.string() << "\n";
  return kOk;
}

int cmd_bench(const std::string& shapes_arg, const BenchOptions& opts, const std::string& out_path, std::ostream& out) {
  std::vector<BenchShape> shapes;
  if (shapes_arg == "table8") {
    shapes = table8_shapes();
  } else {
    std::stringstream ss(shapes_arg);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) shapes.push_back(BenchShape::parse(item));
    }
    if (shapes.empty()) throw ParameterError("--shapes lists no shapes");
  }
  const auto rows = run_jbu_bench(shapes, opts);
  out << bench_table(rows);
  if (!out_path.empty()) write_file_atomic(out_path, bench_csv(rows));
  return kOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Feature upsampling: training, inference and tooling", "featup"};
  app.require_subcommand(1);

  SynthOptions synth;
  std::string synth_out;
  auto* s = app.add_subcommand("synth", "generate a synthetic dataset with known high-resolution features");
  s->add_option("--seed", synth.seed, "dataset seed")->capture_default_str();
  s->add_option("--size", synth.size, "image side in pixels")->capture_default_str();
  s->add_option("--channels", synth.channels, "feature channels")->capture_default_str();
  s->add_option("--count", synth.count, "number of images")->capture_default_str();
  s->add_option("--views", synth.views, "views per image, identity included")->capture_default_str();
  s->add_option("--max-pad", synth.max_pad, "largest jitter padding")->capture_default_str();
  s->add_option("--max-zoom", synth.max_zoom, "largest jitter zoom")->capture_default_str();
  s->add_option("--out", synth_out, "output directory")->required();

  TrainFlags ti;
  ti.cfg = TrainConfig::implicit_defaults();
  std::string ti_image, ti_views, ti_out;
  auto* t1 = app.add_subcommand("train-implicit", "fit an implicit upsampler to one image");
  t1->add_option("--image", ti_image, "guidance PNG")->required();
  t1->add_option("--views", ti_views, "view directory with manifest.json")->required();
  t1->add_option("--out", ti_out, "checkpoint path")->required();
  add_train_flags(t1, ti);
  auto* vs = t1->add_option("--view-seed", ti.view_seed, "jitter set seed (default: the manifest's)");
  t1->add_option("--hidden", ti.cfg.hidden, "MLP width")->capture_default_str();
  t1->add_option("--num-freqs", ti.cfg.num_freqs, "Fourier frequencies per input")->capture_default_str();

  TrainFlags tj;
  tj.cfg = TrainConfig::jbu_defaults();
  std::string tj_corpus, tj_out;
  auto* t2 = app.add_subcommand("train-jbu", "train a JBU stack on an image corpus");
  t2->add_option("--corpus", tj_corpus, "directory of image folders")->required();
  t2->add_option("--out", tj_out, "checkpoint path")->required();
  add_train_flags(t2, tj);
  t2->add_option("--batch", tj.cfg.batch, "images per step")->capture_default_str();
  t2->add_option("--radius", tj.cfg.radius, "JBU neighborhood radius")->capture_default_str();

  std::string up_ckpt, up_image, up_features, up_out;
  int up_factor = 16;
  auto* u = app.add_subcommand("upsample", "upsample features with a trained checkpoint");
  u->add_option("--ckpt", up_ckpt, "checkpoint path")->required();
  u->add_option("--image", up_image, "guidance PNG")->required();
  u->add_option("--features", up_features, "low-resolution features (NPY)");
  u->add_option("--factor", up_factor, "upsampling factor")->capture_default_str();
  u->add_option("--out", up_out, "output NPY")->required();

  std::string viz_lr, viz_hr, viz_out;
  auto* v = app.add_subcommand("viz", "PCA visualization of low- and high-resolution features");
  v->add_option("--lr", viz_lr, "low-resolution NPY")->required();
  v->add_option("--hr", viz_hr, "high-resolution NPY")->required();
  v->add_option("--out", viz_out, "output PNG")->required();

  std::string bench_shapes = "table8", bench_out;
  BenchOptions bench_opts;
  double bench_limit_mb = static_cast<double>(bench_opts.reference_limit_bytes) / (1 << 20);
  auto* b = app.add_subcommand("bench", "time the fast and reference JBU kernels");
  b->add_option("--shapes", bench_shapes, "'table8' or comma-separated BxHxWxCxR")->capture_default_str();
  b->add_option("--out", bench_out, "CSV path");
  b->add_option("--repeats", bench_opts.repeats, "timed repeats per case")->capture_default_str();
  b->add_option("--seed", bench_opts.seed, "data seed")->capture_default_str();
  b->add_option("--reference-limit-mb", bench_limit_mb, "skip reference runs above this footprint")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << "\n";
    return kUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, synth_out, out);
    if (t1->parsed()) return cmd_train_implicit(ti, vs->count() > 0, ti_image, ti_views, ti_out, out);
    if (t2->parsed()) return cmd_train_jbu(tj, tj_corpus, tj_out, out);
    if (u->parsed()) return cmd_upsample(up_ckpt, up_image, up_features, up_factor, up_out, out);
    if (v->parsed()) return cmd_viz(viz_lr, viz_hr, viz_out, out);
    if (b->parsed()) {
      bench_opts.reference_limit_bytes = static_cast<std::size_t>(bench_limit_mb * (1 << 20));
      return cmd_bench(bench_shapes, bench_opts, bench_out, out);
    }
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kFileError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kFileError;
  } catch (const ParameterError& e) {
    err << "error: invalid value: " << e.what() << "\n";
    return kValueError;
  } catch (const DimensionError& e) {
    err << "error: shape mismatch: " << e.what() << "\n";
    return kValueError;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace featup
