// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one pass/fail line per criterion. Criterion 8 performs the
// desk-scale end-to-end runs; criterion 9 reuses its baseline checkpoints.

#include <chrono>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <memory>
#include <numeric>

#include "cqil/cqil.hpp"

#include "oracles.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
using namespace cqil;
using cqil_test::gradcheck;
using cqil_test::random_tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool cond, const std::string& msg) {
    if (!cond) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += "FAILED: " + msg;
    }
  }
  void note(const std::string& msg) {
    if (!detail.empty()) detail += "; ";
    detail += msg;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome criterion1_cdc_correctness() {
  Outcome out;
  Rng rng(101);
  // theta = 0 equals the direct-summation oracle.
  for (size_t stride : {1u, 2u}) {
    auto x = Var<double>::constant(random_tensor({2, 3, 8, 8}, rng));
    auto w = Var<double>::constant(random_tensor({4, 3, 3, 3}, rng));
    auto b = Var<double>::constant(random_tensor({4}, rng));
    auto y = conv2d(x, w, b, stride, 1);
    auto ref = cqil_test::cdc_conv_oracle(x.value(), w.value(), b.value(), 0.0, stride);
    out.require(max_abs_diff(y.value(), ref) < 1e-6,
                "theta=0 vs oracle, stride " + std::to_string(stride));
  }
  // theta = 1 on constant input leaves only the bias (interior pixels).
  {
    auto x = Var<double>::constant(Tensor<double>({1, 2, 6, 6}, 0.37));
    auto w = Var<double>::constant(random_tensor({3, 2, 3, 3}, rng));
    auto b = Var<double>::constant(random_tensor({3}, rng));
    auto y = cdc_conv2d(x, w, b, 1.0, size_t{1});
    double worst = 0;
    for (size_t o = 0; o < 3; ++o)
      for (size_t i = 1; i < 5; ++i)
        for (size_t j = 1; j < 5; ++j)
          worst = std::max(worst, std::abs(y.value().at4(0, o, i, j) - b.value()[o]));
    out.require(worst < 1e-9, "theta=1 constant input bias-only, worst " + fmt(worst, 12));
  }
  // Random case against the oracle.
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto x = Var<double>::constant(random_tensor({1, 1, 5, 5}, rng));
    auto w = Var<double>::constant(random_tensor({2, 1, 3, 3}, rng));
    auto b = Var<double>::constant(random_tensor({2}, rng));
    auto y = cdc_conv2d(x, w, b, 0.7, size_t{1});
    auto ref = cqil_test::cdc_conv_oracle(x.value(), w.value(), b.value(), 0.7, 1);
    worst = std::max(worst, max_abs_diff(y.value(), ref));
  }
  out.require(worst < 1e-6, "random-case oracle match, worst " + fmt(worst, 9));
  out.note("worst random-case deviation " + fmt(worst, 10));
  return out;
}

Outcome criterion2_gradient_checks() {
  Outcome out;
  Rng rng(202);
  double worst = 0;
  {
    auto x = Var<double>::param(random_tensor({2, 2, 5, 5}, rng));
    auto w = Var<double>::param(random_tensor({3, 2, 3, 3}, rng));
    auto b = Var<double>::param(random_tensor({3}, rng));
    auto build = [&] { return mean_all(cdc_conv2d(x, w, b, 0.7, size_t{1})); };
    for (auto* v : {&x, &w, &b}) {
      const double e = gradcheck(build, *v);
      worst = std::max(worst, e);
      out.require(e < 1e-4, "cdc_conv gradient, rel err " + fmt(e, 7));
    }
  }
  {
    auto p = Var<double>::param(random_tensor({30}, rng));
    auto t = Var<double>::constant(random_tensor({30}, rng));
    auto build = [&] { return mse_loss(p, t); };
    const double e = gradcheck(build, p);
    worst = std::max(worst, e);
    out.require(e < 1e-4, "mse_loss gradient, rel err " + fmt(e, 7));
  }
  {
    auto q = Var<double>::param(random_tensor({4, 8}, rng));
    Tensor<double> z = random_tensor({4, 8}, rng);
    auto build = [&] { return mean_all(contrastive_terms(q, z)); };
    const double e = gradcheck(build, q);
    worst = std::max(worst, e);
    out.require(e < 1e-4, "contrastive_term gradient, rel err " + fmt(e, 7));
  }
  {
    auto logits = Var<double>::param(random_tensor({6, 2}, rng));
    std::vector<int> labels = {0, 1, 1, 0, 1, 0};
    auto build = [&] { return adversarial_loss(logits, labels); };
    const double e = gradcheck(build, logits);
    worst = std::max(worst, e);
    out.require(e < 1e-4, "adversarial_loss gradient, rel err " + fmt(e, 7));
  }
  out.note("worst relative error " + fmt(worst, 7));
  return out;
}

Outcome criterion3_grl_contract() {
  Outcome out;
  Rng rng(303);
  Tensor<double> coeff = random_tensor({1, 10}, rng);
  for (double lambda : {0.0, 0.25, 1.0, 3.5}) {
    auto x = Var<double>::param(random_tensor({1, 10}, rng));
    auto y = gradient_reversal(x, lambda);
    out.require(max_abs_diff(y.value(), x.value()) == 0.0, "GRL forward identity");
    // Loss = sum_i coeff_i * y_i, so the downstream gradient at y is coeff.
    auto w = Var<double>::constant(coeff);
    auto b = Var<double>::constant(Tensor<double>({1}));
    auto loss = mean_all(linear(y, w, b));
    x.zero_grad();
    backward(loss);
    double worst = 0;
    for (size_t i = 0; i < 10; ++i)
      worst = std::max(worst, std::abs(x.grad()[i] - (-lambda * coeff.at2(0, i))));
    out.require(worst < 1e-9, "GRL gradient at lambda " + fmt(lambda, 2) +
                                  ", worst " + fmt(worst, 12));
    if (lambda == 0.0) {
      double norm = l2_norm(x.grad());
      out.require(norm == 0.0, "lambda=0 must block the gradient entirely");
    }
  }
  return out;
}

Outcome criterion4_contrastive_and_ema() {
  Outcome out;
  Rng rng(404);
  // Bounds over 1000 random pairs.
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor<double> q = random_tensor({16}, rng);
    Tensor<double> z = random_tensor({16}, rng);
    const double v = contrastive_term(q, z);
    if (v < 0.0 || v > 4.0) {
      out.require(false, "pair term out of [0,4]: " + fmt(v, 6));
      break;
    }
  }
  // Canonical values.
  Tensor<double> e1({2}), e2({2}), ne1({2});
  e1[0] = 1;
  e2[1] = 1;
  ne1[0] = -1;
  out.require(std::abs(contrastive_term(e1, e1) - 0.0) < 1e-9, "aligned != 0");
  out.require(std::abs(contrastive_term(e1, ne1) - 4.0) < 1e-9, "anti-aligned != 4");
  out.require(std::abs(contrastive_term(e1, e2) - 2.0) < 1e-9, "orthogonal != 2");

  // EMA contraction over 5 steps.
  std::vector<Var<double>> xi, theta;
  xi.push_back(Var<double>::param(random_tensor({64}, rng)));
  theta.push_back(Var<double>::param(random_tensor({64}, rng)));
  const double tau = 0.93;
  Tensor<double> d0 = xi[0].value() - theta[0].value();
  const double base = l2_norm(d0);
  double worst = 0;
  for (int k = 1; k <= 5; ++k) {
    ema_update(xi, theta, tau);
    Tensor<double> dk = xi[0].value() - theta[0].value();
    worst = std::max(worst, std::abs(l2_norm(dk) - std::pow(tau, k) * base));
  }
  out.require(worst < 1e-9, "EMA contraction, worst " + fmt(worst, 12));

  // Stop-gradient into the target parameters is exactly zero.
  Rng nrng(405);
  OnlineNetwork<double> online(4, 16, 8, nrng);
  TargetNetwork<double> target(4, 16, 8, nrng);
  ParamList<double> tgt;
  target.collect("target", tgt);
  set_requires_grad(tgt, false);
  QualityPair<double> pair;
  pair.enhanced = Tensor<double>({3, 64, 64});
  for (size_t i = 0; i < pair.enhanced.numel(); ++i)
    pair.enhanced[i] = 0.2 + 0.6 * nrng.uniform();
  pair.original = pair.enhanced;
  for (size_t i = 0; i < pair.original.numel(); ++i)
    pair.original[i] = std::clamp(pair.original[i] + 0.05 * nrng.normal(), 0.0, 1.0);
  Var<double> loss = symmetrized_loss(pair, online, target);
  out.require(loss.value()[0] >= 0.0 && loss.value()[0] <= 8.0,
              "symmetrized loss out of [0,8]");
  backward(loss);
  for (auto& p : tgt) {
    const Tensor<double>& g = p.var.grad();
    for (size_t i = 0; i < g.numel(); ++i)
      if (g[i] != 0.0) {
        out.require(false, "gradient leaked into " + p.name);
        break;
      }
  }
  return out;
}

Outcome criterion5_metrics_oracles() {
  Outcome out;
  Rng rng(505);
  for (int trial = 0; trial < 50; ++trial) {
    ScoredSet s;
    s.add(0.9, Liveness::live);
    s.add(0.1, Liveness::attack);
    for (int i = 2; i < 200; ++i) {
      double score = rng.uniform();
      if (trial % 2 == 0) score = std::round(score * 25.0) / 25.0;  // ties
      s.add(score, rng.uniform() < 0.45 ? Liveness::live : Liveness::attack);
    }
    const double t = select_threshold(s);
    auto sweep = cqil_test::threshold_sweep_oracle(s.scores, s.labels);
    auto rates = apcer_bpcer_acer(s, t);
    const double auc_val = auc(s);
    const double auc_ref = cqil_test::auc_pairs_oracle(s.scores, s.labels);
    if (t != sweep.threshold || rates.apcer != sweep.apcer ||
        rates.bpcer != sweep.bpcer || auc_val != auc_ref ||
        rates.acer != (sweep.apcer + sweep.bpcer) / 2.0 ||
        hter(s, t) != rates.acer) {
      out.require(false, "oracle mismatch at trial " + std::to_string(trial));
      break;
    }
  }
  out.require(std::abs((0.1359 + 0.1157) / 2.0 - 0.1258) < 1e-12,
              "table arithmetic spot check");
  out.note("50 random 200-sample sets matched exactly");
  return out;
}

Outcome criterion6_protocol_invariants(const std::string& scratch) {
  Outcome out;
  size_t checked = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    CorpusSpec spec;
    spec.n_subjects = 5;
    spec.images_per_subject_per_category = 1;
    spec.image_size = 64;
    spec.rng_seed = 1000 + seed;
    auto corpus = generate_corpus(spec, scratch + "/c6_" + std::to_string(seed));
    for (ProtocolId pid : all_protocols()) {
      try {
        ProtocolSplits splits = build_protocol_splits(corpus.records, pid);
        splits.validate();
        ++checked;
      } catch (const std::exception& e) {
        out.require(false, std::string("seed ") + std::to_string(seed) + " " +
                               to_string(pid) + ": " + e.what());
      }
    }
  }
  out.note(std::to_string(checked) + " protocol builds validated over 20 seeds");
  return out;
}

struct SrPhase {
  SRNetwork<float> net{};
  double reduction = 0;
};

Outcome criterion7_sr_efficacy(const std::string& scratch, SrPhase& phase) {
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  CorpusSpec spec;
  spec.n_subjects = 10;
  spec.images_per_subject_per_category = 8;
  spec.image_size = 64;
  spec.rng_seed = 777;
  spec.quality_tiers = {DegradeParams::identity()};
  auto corpus = generate_corpus(spec, scratch + "/c7_corpus");
  std::vector<Tensor<float>> images;
  for (const auto& r : corpus.records) images.push_back(read_ppm<float>(r.path));
  std::vector<Tensor<float>> train(images.begin(), images.begin() + 500);
  std::vector<Tensor<float>> held(images.begin() + 500, images.end());

  const DegradeParams dp{2, 5, 1.1, 0.0};
  Rng rng(derive_seed(7, "sr-init"));
  phase.net = SRNetwork<float>(rng);
  TrainSrOptions opts;
  opts.seed = 7;
  train_sr(phase.net, train, dp, 5, opts);
  auto [mse_restored, mse_degraded] = evaluate_sr(phase.net, held, dp, 99);
  phase.reduction = 1.0 - mse_restored / mse_degraded;

  const double elapsed = seconds_since(t0);
  out.require(mse_restored < mse_degraded, "restored MSE must beat the degraded baseline");
  out.require(phase.reduction >= 0.20,
              "relative reduction " + fmt(100 * phase.reduction, 1) + "% < 20%");
  out.require(elapsed < 300.0, "runtime " + fmt(elapsed, 0) + "s exceeds 5 min");
  out.note("500 pairs, 5 epochs: MSE " + fmt(mse_degraded, 6) + " -> " +
           fmt(mse_restored, 6) + " (" + fmt(100 * phase.reduction, 1) +
           "% reduction) in " + fmt(elapsed, 0) + "s");
  return out;
}

struct E2eArtifacts {
  std::string corpus_dir;
  ProtocolSplits splits;
  std::vector<std::unique_ptr<ModelState<float>>> baselines;  // one per seed
  CorpusMeta meta;
};

Outcome criterion8_end_to_end(const std::string& scratch, const SrPhase& sr,
                              E2eArtifacts& artifacts) {
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();

  CorpusSpec spec;
  spec.n_subjects = 12;
  spec.images_per_subject_per_category = 6;
  spec.image_size = 64;
  spec.rng_seed = 4242;
  artifacts.corpus_dir = scratch + "/c8_corpus";
  auto corpus = generate_corpus(spec, artifacts.corpus_dir);
  artifacts.meta = corpus.meta;
  artifacts.splits = build_protocol_splits(corpus.records, ProtocolId::P3);
  out.note("corpus " + std::to_string(corpus.records.size()) + " records, P3 " +
           std::to_string(artifacts.splits.train.size()) + "/" +
           std::to_string(artifacts.splits.dev.size()) + "/" +
           std::to_string(artifacts.splits.test.size()));

  int wins = 0;
  double disc_sum = 0, aux_sum = 0;
  for (uint64_t seed : {1, 2, 3}) {
    TrainConfig base_cfg = TrainConfig::intra_defaults();  // 10 epochs, 0.2x/epoch
    base_cfg.variant = ModelVariant::resnet_baseline;
    base_cfg.seed = seed;
    base_cfg.encoder_base = 8;
    base_cfg.cls_hidden = 64;
    auto bstate = std::make_unique<ModelState<float>>(base_cfg);
    FitResult<float> bres = fit(*bstate, artifacts.splits);

    TrainConfig cfg = base_cfg;
    cfg.variant = ModelVariant::model4;
    cfg.pair_kernel = 3;
    cfg.pair_sigma = 0.8;
    cfg.pair_scale = 2;
    ModelState<float> mstate(cfg);
    mstate.load_sr(sr.net);
    FitResult<float> mres = fit(mstate, artifacts.splits);

    const bool win = mres.test_report.acer <= bres.test_report.acer;
    wins += win;
    disc_sum += mres.rows.back().disc_acc;
    aux_sum += mres.rows.back().aux_acc;
    out.note("seed " + std::to_string(seed) + ": baseline ACER " +
             fmt(100 * bres.test_report.acer, 2) + "% vs model4 " +
             fmt(100 * mres.test_report.acer, 2) + "% (disc " +
             fmt(mres.rows.back().disc_acc, 3) + ", aux " +
             fmt(mres.rows.back().aux_acc, 3) + (win ? ") WIN" : ") LOSS"));
    artifacts.baselines.push_back(std::move(bstate));
  }
  const double disc_mean = disc_sum / 3.0, aux_mean = aux_sum / 3.0;
  const double elapsed = seconds_since(t0);
  out.require(wins >= 2, "model4 beat the baseline in only " + std::to_string(wins) +
                             "/3 seeds");
  out.require(disc_mean <= 0.60, "discriminator accuracy at convergence " +
                                     fmt(disc_mean, 3) + " > 0.60");
  out.require(aux_mean >= 0.90,
              "auxiliary liveness accuracy " + fmt(aux_mean, 3) + " < 0.90");
  out.require(elapsed < 2700.0, "runtime " + fmt(elapsed, 0) + "s exceeds 45 min");
  out.note("wins " + std::to_string(wins) + "/3, mean disc " + fmt(disc_mean, 3) +
           ", mean aux " + fmt(aux_mean, 3) + ", " + fmt(elapsed, 0) + "s");
  return out;
}

Outcome criterion9_cross_quality(const std::string& scratch, E2eArtifacts& artifacts) {
  Outcome out;
  // Degrade the protocol-3 test band with 3x3 and 5x5 kernels and require a
  // non-improving AUC as the kernel grows, per baseline seed.
  const std::string test_manifest = scratch + "/c9_test_manifest.csv";
  write_manifest(artifacts.splits.test, test_manifest);
  auto manifests = gaussian_degrade_suite(test_manifest, {3, 5}, scratch + "/c9",
                                          artifacts.meta.quality_calibration);
  auto data3 = load_dataset<float>(read_manifest(manifests[0]));
  auto data5 = load_dataset<float>(read_manifest(manifests[1]));

  int non_improving = 0;
  for (size_t i = 0; i < artifacts.baselines.size(); ++i) {
    ScoredSet s3 = score_dataset(*artifacts.baselines[i], data3);
    ScoredSet s5 = score_dataset(*artifacts.baselines[i], data5);
    const double a3 = auc(s3), a5 = auc(s5);
    if (a5 <= a3 + 1e-12) ++non_improving;
    out.note("seed " + std::to_string(i + 1) + ": AUC 3x3 " + fmt(a3, 3) +
             " -> 5x5 " + fmt(a5, 3));
  }
  out.require(non_improving >= 2, "AUC improved with stronger blur in " +
                                      std::to_string(3 - non_improving) + "/3 seeds");
  return out;
}

Outcome criterion10_reproducibility(const std::string& scratch) {
  Outcome out;
  CorpusSpec spec;
  spec.n_subjects = 6;
  spec.images_per_subject_per_category = 2;
  spec.image_size = 64;
  spec.rng_seed = 31;
  auto corpus = generate_corpus(spec, scratch + "/c10_corpus");
  auto splits = build_protocol_splits(corpus.records, ProtocolId::P3);

  TrainConfig cfg = TrainConfig::intra_defaults();
  cfg.variant = ModelVariant::model1;
  cfg.seed = 5;
  cfg.encoder_base = 4;
  cfg.proj_hidden = 16;
  cfg.proj_dim = 8;
  cfg.cls_hidden = 16;
  cfg.disc_hidden = 8;
  cfg.sr_feat_ch = 8;
  cfg.sr_map_ch = 4;
  cfg.epochs = 3;
  cfg.lr = 1e-3;

  // Identical seed and config give identical trajectories and reports.
  ModelState<float> a(cfg), b(cfg);
  FitResult<float> ra = fit(a, splits);
  FitResult<float> rb = fit(b, splits);
  double worst = 0;
  for (size_t e = 0; e < ra.rows.size(); ++e)
    worst = std::max(worst, std::abs(ra.rows[e].total - rb.rows[e].total));
  out.require(worst < 1e-6, "loss trajectories differ by " + fmt(worst, 9));
  out.require(ra.test_report.threshold == rb.test_report.threshold &&
                  ra.test_report.apcer == rb.test_report.apcer &&
                  ra.test_report.bpcer == rb.test_report.bpcer &&
                  ra.test_report.acer == rb.test_report.acer &&
                  ra.test_report.auc == rb.test_report.auc,
              "metric reports differ between identical runs");

  // Checkpoint round trip preserves the trajectory exactly.
  TrainConfig short_cfg = cfg;
  short_cfg.epochs = 1;
  ModelState<float> first(short_cfg);
  fit(first, splits);
  const std::string ckpt = scratch + "/c10.ckpt";
  save_checkpoint(first, ckpt);
  ModelState<float> resumed = load_checkpoint<float>(ckpt);
  resumed.cfg.epochs = 3;
  FitResult<float> rc = fit(resumed, splits);
  // rc rows are epochs 1..2 and must match the uninterrupted run bit-for-bit.
  out.require(rc.rows.size() == 2, "resume produced wrong epoch count");
  for (size_t i = 0; i < rc.rows.size(); ++i) {
    const EpochRow& cont = rc.rows[i];
    const EpochRow& ref = ra.rows[i + 1];
    if (cont.total != ref.total || cont.dev_acer != ref.dev_acer ||
        cont.dev_auc != ref.dev_auc) {
      out.require(false, "trajectory diverged after checkpoint resume at epoch " +
                             std::to_string(cont.epoch));
      break;
    }
  }
  out.note("trajectory deviation " + fmt(worst, 9) + "; resume exact");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::string scratch = "acceptance_data";
  for (int i = 1; i + 1 < argc; i += 2)
    if (std::strcmp(argv[i], "--data-dir") == 0) scratch = argv[i + 1];
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  struct Row {
    int id;
    const char* name;
    Outcome outcome;
    double seconds;
  };
  std::vector<Row> rows;
  SrPhase sr_phase;
  E2eArtifacts artifacts;

  auto run = [&](int id, const char* name, auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    rows.push_back({id, name, std::move(out), seconds_since(t0)});
    const Row& r = rows.back();
    std::cout << (r.outcome.pass ? "[PASS] " : "[FAIL] ") << "criterion " << r.id
              << " (" << fmt(r.seconds, 1) << "s) " << r.name;
    if (!r.outcome.detail.empty()) std::cout << " -- " << r.outcome.detail;
    std::cout << "\n" << std::flush;
  };

  run(1, "CDC correctness vs direct-summation oracle",
      [] { return criterion1_cdc_correctness(); });
  run(2, "gradients vs central finite differences",
      [] { return criterion2_gradient_checks(); });
  run(3, "gradient reversal contract", [] { return criterion3_grl_contract(); });
  run(4, "contrastive bounds and EMA", [] { return criterion4_contrastive_and_ema(); });
  run(5, "metrics match brute-force oracles", [] { return criterion5_metrics_oracles(); });
  run(6, "protocol invariants over 20 corpus seeds",
      [&] { return criterion6_protocol_invariants(scratch); });
  run(7, "restoration-net efficacy",
      [&] { return criterion7_sr_efficacy(scratch, sr_phase); });
  run(8, "desk-scale end-to-end on the quality protocol",
      [&] { return criterion8_end_to_end(scratch, sr_phase, artifacts); });
  run(9, "cross-quality degradation harness",
      [&] { return criterion9_cross_quality(scratch, artifacts); });
  run(10, "reproducibility and checkpoint resume",
      [&] { return criterion10_reproducibility(scratch); });

  size_t passed = 0;
  for (const auto& r : rows) passed += r.outcome.pass;
  std::cout << "\n" << passed << "/" << rows.size() << " acceptance criteria passed\n";
  return passed == rows.size() ? 0 : 1;
}
