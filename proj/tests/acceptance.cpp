// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "delnet/delnet.hpp"
#include "oracles.hpp"

using namespace delnet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// 1. Analytic totals of the default configuration at 2976x4000.
Outcome calibration() {
  const auto r = count_model(ArchConfig{}, 2976, 4000);
  const double p = r.mega_params(), m = r.tera_mult_adds();
  const bool ok = std::abs(p - 2.68) <= 0.2 * 2.68 && std::abs(m - 0.53) <= 0.2 * 0.53;
  return {ok, "params=" + fmt(p, 4) + "e6 (target 2.68e6 +-20%) mult_adds=" + fmt(m, 4) +
                  "e12 (target 0.53e12 +-20%)"};
}

// 2. Analytic vs instrumented MACs on random small configurations.
Outcome counter_soundness() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> levels(1, 3), width(1, 4), blocks(1, 2), eams(1, 2), ndil(1, 3);
  std::size_t agree = 0, total = 12;
  for (std::size_t i = 0; i < total; ++i) {
    ArchConfig c;
    c.variant = kAllVariants[i % 4];
    c.unet_levels = levels(rng);
    c.stem_width = width(rng);
    c.unet_widths = {c.stem_width};
    while (c.unet_widths.size() < c.unet_levels) c.unet_widths.push_back(c.unet_widths.back() + width(rng));
    c.sca_per_level = blocks(rng);
    c.eam_count = eams(rng);
    c.eam_dilations.clear();
    for (std::size_t d = 1, n = ndil(rng); d <= n; ++d) c.eam_dilations.push_back(d);
    const auto params = init_params<float>(c, i);
    const auto raw = Tensor<float>::uniform({1, 1, 16, 16}, rng);
    MacCountScope scope;
    forward(raw, c, params);
    if (scope.count() == count_model(c, 16, 16).total_mult_adds) ++agree;
  }
  return {agree == total, std::to_string(agree) + "/" + std::to_string(total) + " random configs agree exactly"};
}

// 3. Finite-difference suite over ops, blocks and the end-to-end loss.
Outcome gradient_suite() {
  GradSuiteOptions opt;
  const auto results = run_gradient_suite(opt);
  std::size_t ok = 0;
  double worst_op = 0, e2e = 0;
  std::string failed;
  for (const auto& r : results) {
    if (r.passed()) {
      ++ok;
    } else {
      failed += " " + r.name;
    }
    if (r.tolerance > opt.op_tolerance) {
      e2e = std::max(e2e, r.max_rel_error);
    } else {
      worst_op = std::max(worst_op, r.max_rel_error);
    }
  }
  return {ok == results.size() && !results.empty(),
          std::to_string(ok) + "/" + std::to_string(results.size()) + " checks, worst op rel err " + fmt(worst_op, 3) +
              " (< 1e-4), whole-loss "  + fmt(e2e, 3) + " (< 1e-3)" + (failed.empty() ? "" : "; failed:" + failed)};
}

// 4. conv2d against six nested loops.
Outcome conv_oracle() {
  std::mt19937_64 rng(44);
  std::uniform_int_distribution<std::size_t> ext(1, 9), ch(1, 4), kd(0, 2), st(1, 3), dl(1, 3);
  std::size_t run = 0;
  double worst = 0;
  while (run < 100) {
    const std::size_t k = 2 * kd(rng) + 1, s = st(rng), d = dl(rng), h = ext(rng), w = ext(rng);
    const std::size_t pad = std::uniform_int_distribution<std::size_t>(0, d * (k - 1) / 2)(rng);
    if (h + 2 * pad < d * (k - 1) + 1 || w + 2 * pad < d * (k - 1) + 1) continue;
    const auto x = Tensor<double>::normal({ch(rng), ch(rng), h, w}, rng);
    const auto wt = Tensor<double>::normal({ch(rng), x.dim(1), k, k}, rng);
    const auto b = Tensor<double>::normal({wt.dim(0)}, rng);
    worst = std::max(worst, max_abs_diff(kernels::conv2d(x, wt, b, {s, pad, d}), oracle::conv2d(x, wt, b, s, pad, d)));
    ++run;
  }
  return {worst < 1e-10, "100 cases, max |diff| " + fmt(worst, 3) + " (< 1e-10)"};
}

// 5. Zero weights and biases in SCA and EAM blocks give the identity.
Outcome residual_identity() {
  std::mt19937_64 rng(55);
  auto zeroed = [&](const std::vector<ParamSlot>& slots) {
    ModelParams<double> p;
    for (const auto& s : slots) {
      p.add(s.name, s.kind == ParamKind::kSlope ? Tensor<double>::uniform(s.shape, rng) : Tensor<double>::zeros(s.shape));
    }
    return p;
  };
  std::vector<ParamSlot> sca, eam;
  detail::block_slots(sca, "sca", 6, true);
  detail::eam_slots(eam, "eam", 5, {1, 2, 3});
  const auto ps = zeroed(sca), pe = zeroed(eam);
  int exact = 0, trials = 10;
  for (int t = 0; t < trials; ++t) {
    Tape<double> tape;
    BoundParams<double> bs(tape, ps, false), be(tape, pe, false);
    const auto xs = Tensor<double>::normal({2, 6, 9, 11}, rng, 0.0, 2.0);
    const auto xe = Tensor<double>::normal({1, 5, 8, 7}, rng, 0.0, 2.0);
    const bool a = blocks::sca_block(tape.constant(xs), bs, "sca").value() == xs;
    const bool b = blocks::eam_block(tape.constant(xe), be, "eam", {1, 2, 3}).value() == xe;
    exact += a && b;
  }
  return {exact == trials, std::to_string(exact) + "/" + std::to_string(trials) + " random inputs reproduced bit-exactly"};
}

// 6. CIEDE2000 verification pairs, MS-SSIM vs literal loops, PSNR cases.
Outcome metric_fidelity() {
  std::ifstream in(std::string(DELNET_TEST_DATA) + "/ciede2000_pairs.txt");
  std::string line;
  int pairs = 0;
  double de_err = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Lab a, b;
    double want;
    ss >> a.l >> a.a >> a.b >> b.l >> b.a >> b.b >> want;
    de_err = std::max({de_err, std::abs(ciede2000(a, b) - want), std::abs(ciede2000(b, a) - want)});
    ++pairs;
  }

  double ms_err = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0, 0.04 * seed);
    Tensor<double> a({1, 3, 256, 256});
    const double fx = 0.02 + 0.03 * seed, fy = 0.05 / seed;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 256; ++y)
        for (std::size_t x = 0; x < 256; ++x) {
          a.at(0, c, y, x) = 0.5 + 0.3 * std::sin(fx * x + c) * std::cos(fy * y) + 0.05 * std::sin(0.9 * (x + y));
        }
    auto b = a;
    for (auto& v : b.values()) v = std::clamp(v + n(rng), 0.0, 1.0);
    ms_err = std::max(ms_err, std::abs(ms_ssim(a, b) - oracle::ms_ssim(a, b, 5)));
  }

  Tensor<double> zeros({1, 3, 8, 8}), ones({1, 3, 8, 8}, 1.0), half({1, 3, 8, 8}, 0.5);
  const double p0 = psnr(zeros, ones), p6 = psnr(zeros, half), pcap = psnr(half, half);
  const bool psnr_ok = std::abs(p0) < 1e-9 && std::abs(p6 - 6.020599913279624) < 1e-9 && pcap == kPsnrCap;
  const bool ok = pairs == 34 && de_err <= 1e-4 && ms_err <= 1e-6 && psnr_ok;
  return {ok, "CIEDE2000 " + std::to_string(pairs) + " pairs max err " + fmt(de_err, 3) + "; MS-SSIM 3x256^2 max err " +
                  fmt(ms_err, 3) + "; PSNR " + fmt(p0, 3) + "/" + fmt(p6, 10) + "/" + fmt(pcap, 4) + " dB"};
}

// 7. Total loss on a 4x4 pair against a hand computation from the oracles.
Outcome loss_contract() {
  std::mt19937_64 rng(77);
  auto gt = Tensor<double>::uniform({1, 3, 4, 4}, rng);
  auto pred = Tensor<double>::uniform({1, 3, 4, 4}, rng);
  pred[5] = 0.0;
  const LossConfig cfg;
  const RandomConvExtractor<double> ex(cfg.extractor_seed);

  Tensor<double> fa = gt, fb = pred;
  double perceptual = 0;
  for (std::size_t s = 0; s < ex.stages(); ++s) {
    const auto spec = RandomConvExtractor<double>::stage_spec(s);
    fa = oracle::leaky(oracle::conv2d(fa, ex.weight(s), ex.bias(s), spec.stride, spec.padding, spec.dilation), 0.2);
    fb = oracle::leaky(oracle::conv2d(fb, ex.weight(s), ex.bias(s), spec.stride, spec.padding, spec.dilation), 0.2);
    double se = 0;
    for (std::size_t i = 0; i < fa.numel(); ++i) se += (fa[i] - fb[i]) * (fa[i] - fb[i]);
    perceptual += se / static_cast<double>(fa.numel());
  }
  perceptual /= static_cast<double>(ex.stages());
  const double hand = 0.85 * oracle::l1_modified(gt, pred, 1e-3) + 0.15 * (1.0 - oracle::ms_ssim(gt, pred, 1)) +
                      1.0 * perceptual;

  Tape<double> tape;
  const double got = loss_total(tape.constant(gt), tape.constant(pred), cfg, ex).total.value().item();
  const double self = loss_total(tape.constant(gt), tape.constant(gt), cfg, ex).total.value().item();
  const bool ok = std::abs(got - hand) <= 1e-9 && std::abs(self) <= 1e-12;
  return {ok, "loss(gt,gt)=" + fmt(self, 3) + "; 4x4 loss " + fmt(got, 12) + " vs hand " + fmt(hand, 12)};
}

// Mean total loss over the whole dataset, one batch, no augmentation.
double dataset_loss(const ArchConfig& c, const ModelParams<float>& p, const std::vector<TrainPair>& data) {
  std::vector<const Tensor<float>*> raws, targets;
  for (const auto& d : data) {
    raws.push_back(&d.raw.data);
    targets.push_back(&d.target);
  }
  const LossConfig lc;
  const RandomConvExtractor<float> ex(lc.extractor_seed);
  Tape<float> tape;
  BoundParams<float> bound(tape, p, false);
  auto pred = forward(tape.constant(detail::stack(raws)), c, bound);
  return loss_total(tape.constant(detail::stack(targets)), pred, lc, ex).total.value().item();
}

// 8. 200 AdamW steps on 8 synthetic 64x64 pairs, single thread.
Outcome overfit() {
  set_num_threads(1);
  std::vector<TrainPair> data;
  for (std::uint64_t i = 0; i < 8; ++i) data.push_back(synth_pair(100 + i, 64, 64));
  const ArchConfig config;
  TrainOptions opt;
  opt.steps = 200;
  opt.seed = 7;
  opt.optimizer.lr = 1e-4;
  opt.optimizer.beta1 = 0.9;
  opt.optimizer.beta2 = 0.999;

  const auto start = std::chrono::steady_clock::now();
  const auto result = train(config, LossConfig{}, data, opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const double before = dataset_loss(config, init_params<float>(config, opt.seed), data);
  const double after = dataset_loss(config, result.params, data);

  // Determinism: a fresh short run must reproduce the leading curve exactly.
  TrainOptions again = opt;
  again.steps = 10;
  const auto rerun = train(config, LossConfig{}, data, again);
  bool same = true;
  for (std::size_t i = 0; i < rerun.curve.size(); ++i) same = same && rerun.curve[i].total == result.curve[i].total;

  bool finite = true;
  for (const auto& v : result.curve) finite = finite && std::isfinite(v.total);
  set_num_threads(0);
  const bool ok = after <= 0.5 * before && same && finite && secs < 600;
  return {ok, "dataset loss " + fmt(before, 5) + " -> " + fmt(after, 5) + " (ratio " + fmt(after / before, 3) +
                  ", need <= 0.5); batch loss " + fmt(result.curve.front().total, 4) + " -> " +
                  fmt(result.curve.back().total, 4) + "; rerun " + (same ? "identical" : "DIFFERS") + "; " +
                  fmt(secs, 4) + " s"};
}

// 9. All four variants run forward at 64x64; parameter ordering holds.
Outcome ablation() {
  const ArchConfig base;
  std::mt19937_64 rng(9);
  const auto raw = Tensor<float>::uniform({1, 1, 64, 64}, rng);
  bool forward_ok = true;
  for (auto v : kAllVariants) {
    const auto c = base.with_variant(v);
    const auto out = forward(raw, c, init_params<float>(c, 1));
    forward_ok = forward_ok && out.shape() == Shape{1, 3, 64, 64};
    for (float x : out.values()) forward_ok = forward_ok && x >= 0.0f && x <= 1.0f;
  }
  const auto rows = ablation_table(base, 64, 64);
  std::ostringstream table;
  print_ablation(table, rows);
  std::cout << table.str();
  const bool ok = forward_ok && params_monotone(rows);
  std::string detail = "forward " + std::string(forward_ok ? "ok" : "FAILED") + "; params";
  for (const auto& r : rows) detail += " " + std::string(variant_name(r.variant)) + "=" + std::to_string(r.params);
  return {ok, detail};
}

// 10. Flip involution with CFA tracking, lossless 8-bit round trip, range.
Outcome data_invariants() {
  bool involution = true, phase = true;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto pair = synth_pair(seed, 16, 12);
    for (int m = 0; m < 4; ++m) {
      const bool h = m & 1, v = m & 2;
      const auto f = augment_flip(pair, h, v);
      involution = involution && augment_flip(f, h, v) == pair;
      for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 12; ++x) {
          const std::size_t sy = v ? 15 - y : y, sx = h ? 11 - x : x;
          phase = phase && cfa_color(f.raw.cfa, y, x) == cfa_color(pair.raw.cfa, sy, sx) &&
                  f.raw.data.at(0, 0, y, x) == pair.raw.data.at(0, 0, sy, sx);
        }
    }
  }

  const auto dir = std::filesystem::temp_directory_path() / ("delnet_accept_" + std::to_string(std::random_device{}()));
  std::filesystem::create_directories(dir);
  bool lossless = true, in_range = true;
  {
    PngImage img{17, 9, 3, 8, std::vector<std::uint16_t>(17 * 9 * 3)};
    for (std::size_t i = 0; i < img.samples.size(); ++i) img.samples[i] = static_cast<std::uint16_t>(i % 256);
    write_png(dir / "rt.png", img);
    const auto t = load_rgb(dir / "rt.png");
    write_image(t, dir / "rt2.png");
    lossless = read_png(dir / "rt.png").samples == img.samples && read_png(dir / "rt2.png").samples == img.samples;

    std::vector<TrainPair> pairs;
    for (std::uint64_t i = 0; i < 3; ++i) pairs.push_back(synth_pair(i, 8, 8));
    write_dataset(dir / "ds", pairs);
    for (const auto& p : load_dataset(dir / "ds")) {
      for (float v : p.raw.data.values()) in_range = in_range && v >= 0.0f && v <= 1.0f;
      for (float v : p.target.values()) in_range = in_range && v >= 0.0f && v <= 1.0f;
    }
  }
  std::filesystem::remove_all(dir);
  const bool ok = involution && phase && lossless && in_range;
  auto yn = [](bool b) { return b ? "ok" : "FAILED"; };
  return {ok, std::string("flip involution ") + yn(involution) + "; CFA phase " + yn(phase) + "; 8-bit round trip " +
                  yn(lossless) + "; loaded range " + yn(in_range)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"complexity calibration", calibration},
      {"counter soundness", counter_soundness},
      {"gradient suite", gradient_suite},
      {"convolution oracle", conv_oracle},
      {"residual identity", residual_identity},
      {"metric fidelity", metric_fidelity},
      {"loss contract", loss_contract},
      {"overfit sanity", overfit},
      {"ablation structure", ablation},
      {"data invariants", data_invariants},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << i + 1 << ". " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failures ? 1 : 0;
}
