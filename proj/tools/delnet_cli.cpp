// delnet: command-line front end for inference, training, evaluation and
// complexity accounting.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "delnet/delnet.hpp"

namespace fs = std::filesystem;
using namespace delnet;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Extent2 {
  std::size_t h = 0, w = 0;
};

Extent2 parse_extent(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw UsageError("expected HxW, got '" + text + "'");
  try {
    return {parse_size(text.substr(0, x), "height"), parse_size(text.substr(x + 1), "width")};
  } catch (const ConfigError&) {
    throw UsageError("expected HxW, got '" + text + "'");
  }
}

// Architecture source: a key-value file (or "default") plus per-key flags.
struct ArchFlags {
  std::string config = "default";
  std::optional<std::string> variant, stem_width, eam_count, eam_dilations, unet_levels, unet_widths, sca_per_level;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "Architecture file (key = value lines) or 'default'")->capture_default_str();
    app->add_option("--variant", variant, "UNet, UNet+SCA, UNet+EAM or DelNet");
    app->add_option("--stem-width", stem_width, "Stem output channels");
    app->add_option("--eam-count", eam_count, "Number of EAM blocks");
    app->add_option("--eam-dilations", eam_dilations, "Comma-separated EAM dilations");
    app->add_option("--unet-levels", unet_levels, "UNet depth");
    app->add_option("--unet-widths", unet_widths, "Comma-separated per-level widths");
    app->add_option("--sca-per-level", sca_per_level, "Blocks per UNet level");
  }

  ArchConfig resolve() const {
    ArchConfig base;
    if (config != "default") {
      if (!fs::exists(config)) throw UsageError("config file '" + config + "' does not exist");
      base = ArchConfig::from_doc(KeyValueDoc::load(config));
    }
    KeyValueDoc overrides;
    const std::pair<const char*, const std::optional<std::string>*> keys[] = {
        {"variant", &variant},         {"stem_width", &stem_width},   {"eam_count", &eam_count},
        {"eam_dilations", &eam_dilations}, {"unet_levels", &unet_levels}, {"unet_widths", &unet_widths},
        {"sca_per_level", &sca_per_level}};
    for (const auto& [key, value] : keys) {
      if (*value) overrides.set(key, **value);
    }
    return base.merged(overrides);
  }
};

// Model weights from a DLW1 file, or fresh ones from the seed.
std::pair<ArchConfig, ModelParams<float>> resolve_model(const ArchFlags& arch, const std::string& weights,
                                                        std::uint64_t seed) {
  if (!weights.empty()) {
    if (fs::exists(config_path_for(weights)) && arch.config == "default") return load_model<float>(weights);
    const auto config = arch.resolve();
    return {config, load_params<float>(weights, config)};
  }
  const auto config = arch.resolve();
  return {config, init_params<float>(config, seed)};
}

Tensor<float> run_model(const ArchConfig& config, const ModelParams<float>& params, const RawImage& raw) {
  return forward(raw.data, config, params);
}

void write_metrics_row(std::ostream& os, const std::string& id, const MetricReport& m) {
  os << id << ',' << m.psnr << ',' << m.ssim << ',' << m.ms_ssim << ',' << m.delta_e00 << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Raw-to-sRGB network: inference, training, evaluation and complexity tools", "delnet"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::uint64_t seed = 0;
  int threads = 0;
  app.add_option("--seed", seed, "Seed for parameter init, shuffling and synthesis")->capture_default_str();
  app.add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str()->check(CLI::NonNegativeNumber);

  // infer
  auto* infer = app.add_subcommand("infer", "Run the network on a raw mosaic and write an sRGB PNG");
  ArchFlags infer_arch;
  infer_arch.attach(infer);
  std::string infer_weights, infer_input, infer_output, infer_cfa = "RGGB";
  infer->add_option("--weights", infer_weights, "DLW1 weights (default: fresh init from --seed)")->check(CLI::ExistingFile);
  infer->add_option("--input", infer_input, "Raw mosaic (.png or .dlt)")->required()->check(CLI::ExistingFile);
  infer->add_option("--output", infer_output, "Output PNG path")->required();
  infer->add_option("--cfa", infer_cfa, "CFA pattern of the input")->capture_default_str();

  // train
  auto* trn = app.add_subcommand("train", "Train on a dataset directory (raw/, rgb/)");
  ArchFlags train_arch;
  train_arch.attach(trn);
  std::string train_data, train_index, train_out, train_init;
  TrainOptions topt;
  LossConfig loss;
  bool no_augment = false;
  trn->add_option("--data", train_data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  trn->add_option("--index", train_index, "File listing the ids to use")->check(CLI::ExistingFile);
  trn->add_option("--out", train_out, "Output directory for weights, loss log and checkpoints")->required();
  trn->add_option("--init", train_init, "Start from these DLW1 weights")->check(CLI::ExistingFile);
  trn->add_option("--steps", topt.steps, "Optimizer steps")->capture_default_str();
  trn->add_option("--batch-size", topt.batch_size, "Pairs per step")->capture_default_str()->check(CLI::PositiveNumber);
  trn->add_option("--lr", topt.optimizer.lr, "Learning rate")->capture_default_str();
  trn->add_option("--beta1", topt.optimizer.beta1, "First-moment decay")->capture_default_str();
  trn->add_option("--beta2", topt.optimizer.beta2, "Second-moment decay")->capture_default_str();
  trn->add_option("--weight-decay", topt.optimizer.weight_decay, "Decoupled weight decay")->capture_default_str();
  trn->add_option("--checkpoint-every", topt.checkpoint_every, "Checkpoint period in steps (0 = off)")
      ->capture_default_str();
  trn->add_flag("--no-augment", no_augment, "Disable random flips");
  trn->add_option("--lambda1", loss.lambda1, "Weight of the modified L1 term")->capture_default_str();
  trn->add_option("--lambda2", loss.lambda2, "Weight of the MS-SSIM term")->capture_default_str();
  trn->add_option("--lambda3", loss.lambda3, "Weight of the perceptual term")->capture_default_str();
  trn->add_option("--epsilon", loss.epsilon, "Log floor of the modified L1 term")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "Score predictions against a dataset's rgb/ targets (CSV)");
  ArchFlags eval_arch;
  eval_arch.attach(eval);
  std::string eval_data, eval_index, eval_pred, eval_weights, eval_output;
  eval->add_option("--data", eval_data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--index", eval_index, "File listing the ids to score")->check(CLI::ExistingFile);
  eval->add_option("--pred", eval_pred, "Directory of predicted <id>.png (default: run the model)")
      ->check(CLI::ExistingDirectory);
  eval->add_option("--weights", eval_weights, "DLW1 weights used when --pred is absent")->check(CLI::ExistingFile);
  eval->add_option("--output", eval_output, "CSV path (default: stdout)");

  // complexity
  auto* cx = app.add_subcommand("complexity", "Analytic Mult-Adds and parameter count");
  ArchFlags cx_arch;
  cx_arch.attach(cx);
  std::string cx_input = "2976x4000";
  bool cx_layers = false;
  cx->add_option("--input", cx_input, "Raw input extents HxW")->capture_default_str();
  cx->add_flag("--per-layer", cx_layers, "Print one row per layer");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite (exit 1 on failure)");
  GradSuiteOptions gopt;
  bool gc_skip_e2e = false;
  gc->add_option("--trials", gopt.trials, "Random directions per op")->capture_default_str();
  gc->add_flag("--skip-end-to-end", gc_skip_e2e, "Skip the whole-model loss check");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Params and Mult-Adds of the four ablation variants");
  ArchFlags ab_arch;
  ab_arch.attach(ab);
  std::string ab_input = "2976x4000";
  ab->add_option("--input", ab_input, "Raw input extents HxW")->capture_default_str();

  // synth-data
  auto* sd = app.add_subcommand("synth-data", "Write a synthetic raw/rgb dataset");
  std::string sd_out, sd_size = "64x64";
  std::size_t sd_count = 8;
  SynthOptions sopt;
  sd->add_option("--out", sd_out, "Dataset root to create")->required();
  sd->add_option("--count", sd_count, "Number of pairs")->capture_default_str()->check(CLI::PositiveNumber);
  sd->add_option("--size", sd_size, "Extents HxW (even)")->capture_default_str();
  sd->add_option("--noise", sopt.noise_sigma, "Raw noise sigma")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "delnet: usage error: " << e.what() << "\n";
    std::cerr << "Run with --help for usage.\n";
    return 2;
  }

  try {
    set_num_threads(threads);

    if (*infer) {
      const auto [config, params] = resolve_model(infer_arch, infer_weights, seed);
      const auto raw = load_raw(infer_input, parse_cfa(infer_cfa));
      write_image(run_model(config, params, raw), infer_output);
      std::cout << "wrote " << infer_output << " (" << raw.data.dim(2) << "x" << raw.data.dim(3) << ")\n";
    } else if (*trn) {
      const auto config = train_arch.resolve();
      loss.validate();
      topt.optimizer.validate();
      const auto dataset = load_dataset(train_data, train_index);
      fs::create_directories(train_out);
      std::ofstream csv(fs::path(train_out) / "loss.csv");
      if (!csv) throw IoError("cannot write '" + (fs::path(train_out) / "loss.csv").string() + "'");
      topt.seed = seed;
      topt.augment = !no_augment;
      topt.csv_log = &csv;
      topt.checkpoint_dir = fs::path(train_out) / "checkpoints";
      topt.on_step = [&](std::size_t step, const LossValues& v) {
        if (step % 10 == 0 || step + 1 == topt.steps) write_loss_record(std::cout, step, v);
      };
      std::optional<ModelParams<float>> initial;
      if (!train_init.empty()) initial = read_params<float>(train_init);
      const auto result = train(config, loss, dataset, topt, initial);
      save_model(result.params, config, fs::path(train_out) / "final.dlw");
      save_optim_state(result.state, fs::path(train_out) / "final.dlo");
      std::cout << "wrote " << (fs::path(train_out) / "final.dlw").string() << "\n";
    } else if (*eval) {
      std::optional<std::pair<ArchConfig, ModelParams<float>>> model;
      if (eval_pred.empty()) model = resolve_model(eval_arch, eval_weights, seed);
      std::ofstream file;
      if (!eval_output.empty()) {
        file.open(eval_output);
        if (!file) throw IoError("cannot write '" + eval_output + "'");
      }
      std::ostream& os = eval_output.empty() ? std::cout : file;
      os.precision(8);
      os << "id,psnr,ssim,ms_ssim,delta_e00\n";
      MetricReport sum;
      std::size_t n = 0;
      for (const auto& id : list_dataset_ids(eval_data, eval_index)) {
        const auto gt = load_rgb(fs::path(eval_data) / "rgb" / (id + ".png"));
        Tensor<float> pred;
        if (model) {
          pred = run_model(model->first, model->second, load_raw(raw_path_for(eval_data, id)));
        } else {
          pred = load_rgb(fs::path(eval_pred) / (id + ".png"));
        }
        const auto m = evaluate(gt, pred);
        write_metrics_row(os, id, m);
        sum.psnr += m.psnr;
        sum.ssim += m.ssim;
        sum.ms_ssim += m.ms_ssim;
        sum.delta_e00 += m.delta_e00;
        ++n;
      }
      if (n == 0) throw DataError("eval: dataset '" + eval_data + "' has no pairs");
      const double k = static_cast<double>(n);
      write_metrics_row(os, "mean", {sum.psnr / k, sum.ssim / k, sum.ms_ssim / k, sum.delta_e00 / k});
    } else if (*cx) {
      const auto config = cx_arch.resolve();
      const auto e = parse_extent(cx_input);
      print_report(std::cout, count_model(config, e.h, e.w), cx_layers);
    } else if (*gc) {
      gopt.seed = seed;
      gopt.include_end_to_end = !gc_skip_e2e;
      const auto results = run_gradient_suite(gopt, &std::cout);
      std::size_t failed = 0;
      for (const auto& r : results) failed += !r.passed();
      std::cout << results.size() - failed << "/" << results.size() << " gradient checks passed\n";
      return failed ? 1 : 0;
    } else if (*ab) {
      const auto config = ab_arch.resolve();
      const auto e = parse_extent(ab_input);
      const auto rows = ablation_table(config, e.h, e.w);
      print_ablation(std::cout, rows);
      if (!params_monotone(rows)) {
        std::cerr << "delnet: error: parameter counts are not monotone across variants\n";
        return 1;
      }
    } else if (*sd) {
      const auto e = parse_extent(sd_size);
      std::vector<TrainPair> pairs;
      for (std::size_t i = 0; i < sd_count; ++i) pairs.push_back(synth_pair(seed + i, e.h, e.w, sopt));
      write_dataset(sd_out, pairs);
      std::cout << "wrote " << sd_count << " pairs to " << sd_out << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "delnet: usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "delnet: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "delnet: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
