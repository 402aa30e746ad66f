// Command-line entry point: corpus generation, restoration-net pretraining,
// full training runs, evaluation, cross-quality degradation harness and
// summary reporting. Every command writes a run_manifest.json into its output
// directory; outputs are deterministic given the seed (timestamps live only
// in the run manifest).

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "cqil/cqil.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string default_data_root() {
  const char* env = std::getenv("CQIL_DATA_ROOT");
  return env ? env : "data";
}

void write_run_manifest(const std::string& dir, const std::string& command,
                        const cqil::Config& cfg, uint64_t seed,
                        const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs) {
  json j;
  j["command"] = command;
  j["config_digest"] = cfg.digest();
  j["seed"] = seed;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["tool_version"] = cqil::kVersion;
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  j["timestamp_unix"] =
      std::chrono::duration_cast<std::chrono::seconds>(now).count();
  fs::create_directories(dir);
  std::ofstream f(fs::path(dir) / "run_manifest.json", std::ios::binary);
  f << j.dump(2) << "\n";
}

std::vector<cqil::Tensor<float>> load_images(const std::vector<cqil::SampleRecord>& recs) {
  std::vector<cqil::Tensor<float>> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back(cqil::read_ppm<float>(r.path));
  return out;
}

int cmd_gen_data(const std::string& out_dir, int subjects, int images_per,
                 size_t size, uint64_t seed) {
  cqil::CorpusSpec spec;
  spec.n_subjects = subjects;
  spec.images_per_subject_per_category = images_per;
  spec.image_size = size;
  spec.rng_seed = seed;
  cqil::GeneratedCorpus corpus = cqil::generate_corpus(spec, out_dir);

  std::vector<std::string> outputs{corpus.manifest_path, corpus.meta_path};
  for (cqil::ProtocolId pid : cqil::all_protocols()) {
    cqil::ProtocolSplits splits = cqil::build_protocol_splits(corpus.records, pid);
    const fs::path pdir = fs::path(out_dir) / "protocols" / cqil::to_string(pid);
    fs::create_directories(pdir);
    cqil::write_manifest(splits.train, (pdir / "train.csv").string(), true);
    cqil::write_manifest(splits.dev, (pdir / "dev.csv").string(), true);
    cqil::write_manifest(splits.test, (pdir / "test.csv").string(), true);
    outputs.push_back(pdir.string());
  }

  cqil::Config cfg;
  cfg.set("subjects", static_cast<uint64_t>(subjects));
  cfg.set("images_per", static_cast<uint64_t>(images_per));
  cfg.set("image_size", static_cast<uint64_t>(size));
  cfg.set("seed", seed);
  write_run_manifest(out_dir, "gen-data", cfg, seed, {}, outputs);
  std::cout << "corpus: " << corpus.records.size() << " records, calibration "
            << corpus.meta.quality_calibration << "\n";
  return 0;
}

int cmd_train_sr(const std::string& data_dir, const std::string& out_path,
                 size_t epochs, uint64_t seed, double min_quality,
                 const std::string& config_path) {
  cqil::Config cfg;
  if (!config_path.empty()) cfg = cqil::Config::load(config_path);
  cqil::DegradeParams dp;
  dp.scale_factor = static_cast<int>(cfg.get_uint("sr_degrade_scale", 2));
  dp.gauss_kernel = static_cast<int>(cfg.get_uint("sr_degrade_kernel", 3));
  dp.gauss_sigma = cfg.get_double("sr_degrade_sigma", 0.0);
  dp.noise_std = cfg.get_double("sr_degrade_noise", 0.01);

  auto records = cqil::read_manifest((fs::path(data_dir) / "manifest.csv").string());
  std::vector<cqil::SampleRecord> clean;
  for (const auto& r : records)
    if (r.quality_score >= min_quality) clean.push_back(r);
  CQIL_CHECK_MSG(!clean.empty(), "no images with quality >= " << min_quality);

  auto images = load_images(clean);
  cqil::Rng rng(cqil::derive_seed(seed, "sr-init"));
  cqil::SRNetwork<float> net(rng, cfg.get_uint("sr_feat_ch", 64),
                             cfg.get_uint("sr_map_ch", 32));
  cqil::TrainSrOptions opts;
  opts.lr = cfg.get_double("sr_lr", 1e-3);
  opts.batch_size = cfg.get_uint("sr_batch", 8);
  opts.seed = seed;
  opts.verbose = true;
  auto losses = cqil::train_sr(net, images, dp, epochs, opts);
  cqil::save_sr_checkpoint(net, out_path, seed, epochs);

  cqil::Config rc = cfg;
  rc.set("seed", seed);
  rc.set("epochs", static_cast<uint64_t>(epochs));
  write_run_manifest(fs::path(out_path).parent_path().string(), "train-sr", rc, seed,
                     {data_dir}, {out_path});
  if (!losses.empty())
    std::cout << "train-sr: " << images.size() << " images, final loss "
              << losses.back() << "\n";
  return 0;
}

cqil::ProtocolSplits load_splits(const std::string& data_dir,
                                 cqil::ProtocolId pid) {
  auto records =
      cqil::read_manifest((fs::path(data_dir) / "manifest.csv").string());
  return cqil::build_protocol_splits(records, pid);
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& protocol, const std::string& variant,
              long long seed, long long epochs, const std::string& out_dir,
              const std::string& sr_ckpt) {
  cqil::Config file_cfg;
  if (!config_path.empty()) file_cfg = cqil::Config::load(config_path);
  // Command-line flags override the config file.
  if (!variant.empty()) file_cfg.set("variant", variant);
  if (seed >= 0) file_cfg.set("seed", static_cast<uint64_t>(seed));
  if (epochs >= 0) file_cfg.set("epochs", static_cast<uint64_t>(epochs));
  cqil::TrainConfig cfg = cqil::TrainConfig::from_config(file_cfg);

  cqil::ProtocolSplits splits =
      load_splits(data_dir, cqil::protocol_from_string(protocol));
  cqil::ModelState<float> state(cfg);
  if (!sr_ckpt.empty()) state.load_sr(cqil::load_sr_checkpoint<float>(sr_ckpt));

  cqil::FitOptions opts;
  opts.run_dir = out_dir;
  opts.verbose = true;
  cqil::FitResult<float> result = cqil::fit(state, splits, opts);

  write_run_manifest(out_dir, "train", cfg.to_config(), cfg.seed,
                     {data_dir, config_path, sr_ckpt},
                     {out_dir + "/final.ckpt", out_dir + "/report.json"});
  std::cout << "train: " << cqil::to_string(cfg.variant) << " on " << protocol
            << ", test ACER "
            << cqil::detail::percent2(result.test_report.acer) << "%\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir,
             const std::string& protocol, const std::string& out_dir) {
  cqil::ModelState<float> state = cqil::load_checkpoint<float>(ckpt);
  cqil::ProtocolSplits splits =
      load_splits(data_dir, cqil::protocol_from_string(protocol));
  auto dev = cqil::load_dataset<float>(splits.dev);
  auto test = cqil::load_dataset<float>(splits.test);
  std::vector<cqil::Tensor<float>> dev_cache, test_cache;
  cqil::ScoredSet dev_scores = cqil::score_dataset(state, dev, &dev_cache);
  cqil::ScoredSet test_scores = cqil::score_dataset(state, test, &test_cache);
  cqil::MetricsReport rep = cqil::evaluate_sets(
      dev_scores, test_scores, protocol, cqil::to_string(state.cfg.variant));
  fs::create_directories(out_dir);
  cqil::write_report_json(rep, (fs::path(out_dir) / "report.json").string());
  cqil::write_report_csv(rep, (fs::path(out_dir) / "report.csv").string());
  write_run_manifest(out_dir, "eval", state.cfg.to_config(), state.cfg.seed,
                     {ckpt, data_dir}, {out_dir + "/report.json"});
  std::cout << "eval " << protocol << ": threshold " << rep.threshold << " apcer "
            << cqil::detail::percent2(rep.apcer) << "% bpcer "
            << cqil::detail::percent2(rep.bpcer) << "% acer "
            << cqil::detail::percent2(rep.acer) << "%\n";
  return 0;
}

int cmd_degrade(const std::string& in_manifest, const std::vector<int>& kernels,
                int scale, const std::string& out_dir) {
  // The calibration constant travels with the corpus.
  const fs::path meta_path = fs::path(in_manifest).parent_path() / "corpus_meta.json";
  double calibration = cqil::kDefaultQualityCalibration;
  uint64_t seed = 0;
  if (fs::exists(meta_path)) {
    cqil::CorpusMeta meta = cqil::read_corpus_meta(meta_path.string());
    calibration = meta.quality_calibration;
    seed = meta.seed;
  }
  auto manifests =
      cqil::gaussian_degrade_suite(in_manifest, kernels, out_dir, calibration, scale);
  cqil::Config cfg;
  std::string klist;
  for (int k : kernels) klist += (klist.empty() ? "" : ",") + std::to_string(k);
  cfg.set("kernels", klist);
  cfg.set("scale", static_cast<uint64_t>(scale));
  write_run_manifest(out_dir, "degrade", cfg, seed, {in_manifest}, manifests);
  for (const auto& m : manifests) std::cout << m << "\n";
  return 0;
}

int cmd_report(const std::string& runs_root, const std::string& out_path) {
  // Collects report.json files from run directories and produces a variant x
  // protocol ACER summary; protocol-2 sub-protocols aggregate to mean +/- std.
  std::map<std::string, std::map<std::string, cqil::MetricsReport>> by_variant;
  for (const auto& entry : fs::recursive_directory_iterator(runs_root)) {
    if (entry.path().filename() != "report.json") continue;
    cqil::MetricsReport rep = cqil::read_report_json(entry.path().string());
    by_variant[rep.variant.empty() ? "unknown" : rep.variant][rep.protocol_id] = rep;
  }
  CQIL_CHECK_MSG(!by_variant.empty(), "no report.json files under " << runs_root);

  std::ofstream f(out_path, std::ios::binary);
  CQIL_CHECK_MSG(f.good(), "cannot write " << out_path);
  f << "variant,protocol,apcer,bpcer,acer,hter,auc\n";
  char buf[256];
  for (const auto& [variant, reports] : by_variant) {
    std::vector<cqil::MetricsReport> p2;
    for (const auto& [proto, rep] : reports) {
      std::snprintf(buf, sizeof(buf), "%s,%s,%.2f,%.2f,%.2f,%.2f,%.2f",
                    variant.c_str(), proto.c_str(),
                    cqil::detail::percent2(rep.apcer),
                    cqil::detail::percent2(rep.bpcer),
                    cqil::detail::percent2(rep.acer),
                    cqil::detail::percent2(rep.hter),
                    cqil::detail::percent2(rep.auc));
      f << buf << "\n";
      if (proto.rfind("P2.", 0) == 0) p2.push_back(rep);
    }
    if (p2.size() == 4) {
      cqil::Protocol2Summary s = cqil::aggregate_protocol2(p2);
      std::snprintf(buf, sizeof(buf),
                    "%s,P2,%.2f±%.2f,%.2f±%.2f,%.2f±%.2f,%.2f±%.2f,%.2f±%.2f",
                    variant.c_str(), 100 * s.apcer.mean, 100 * s.apcer.stddev,
                    100 * s.bpcer.mean, 100 * s.bpcer.stddev, 100 * s.acer.mean,
                    100 * s.acer.stddev, 100 * s.hter.mean, 100 * s.hter.stddev,
                    100 * s.auc.mean, 100 * s.auc.stddev);
      f << buf << "\n";
    }
  }
  std::cout << "report written to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contrastive quality-invariance learning toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus and protocol splits");
  std::string gen_out = default_data_root();
  int gen_subjects = 12, gen_images = 3;
  size_t gen_size = 64;
  uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--subjects", gen_subjects, "number of subjects");
  gen->add_option("--images-per", gen_images, "images per subject per category");
  gen->add_option("--size", gen_size, "square image side (power of two)");
  gen->add_option("--seed", gen_seed, "corpus seed");

  // train-sr
  auto* tsr = app.add_subcommand("train-sr", "pretrain the restoration network");
  std::string tsr_data = default_data_root(), tsr_out = "sr.ckpt", tsr_cfg;
  size_t tsr_epochs = 5;
  uint64_t tsr_seed = 0;
  double tsr_minq = 0.5;
  tsr->add_option("--data", tsr_data, "corpus directory");
  tsr->add_option("--out", tsr_out, "checkpoint path");
  tsr->add_option("--config", tsr_cfg, "config file");
  tsr->add_option("--epochs", tsr_epochs, "training epochs");
  tsr->add_option("--seed", tsr_seed, "seed");
  tsr->add_option("--min-quality", tsr_minq, "minimum quality score of clean images");

  // train
  auto* tr = app.add_subcommand("train", "train a model variant on a protocol");
  std::string tr_cfg, tr_data = default_data_root(), tr_proto = "P1", tr_variant,
              tr_out = "run", tr_sr;
  long long tr_seed = -1, tr_epochs = -1;
  tr->add_option("--config", tr_cfg, "config file");
  tr->add_option("--data", tr_data, "corpus directory");
  tr->add_option("--protocol", tr_proto, "P1, P2.1..P2.4 or P3");
  tr->add_option("--variant", tr_variant, "resnet_baseline|model1|model2|model3|model4");
  tr->add_option("--seed", tr_seed, "seed override");
  tr->add_option("--epochs", tr_epochs, "epoch override");
  tr->add_option("--out", tr_out, "run directory");
  tr->add_option("--sr", tr_sr, "pretrained restoration checkpoint");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a protocol");
  std::string ev_ckpt, ev_data = default_data_root(), ev_proto = "P1", ev_out = "eval";
  ev->add_option("--ckpt", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--data", ev_data, "corpus directory");
  ev->add_option("--protocol", ev_proto, "protocol id");
  ev->add_option("--out", ev_out, "output directory");

  // degrade
  auto* dg = app.add_subcommand("degrade", "build gaussian-degraded test manifests");
  std::string dg_in, dg_out = "degraded";
  std::vector<int> dg_kernels;
  int dg_scale = 1;
  dg->add_option("--in", dg_in, "source manifest.csv")->required();
  dg->add_option("--kernel", dg_kernels, "gaussian kernel size (repeatable)")->required();
  dg->add_option("--scale", dg_scale, "down/up sampling factor");
  dg->add_option("--out", dg_out, "output directory");

  // report
  auto* rp = app.add_subcommand("report", "aggregate run reports into a summary table");
  std::string rp_root = "runs", rp_out = "summary.csv";
  rp->add_option("--runs", rp_root, "directory scanned for report.json files");
  rp->add_option("--out", rp_out, "summary CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_out, gen_subjects, gen_images, gen_size, gen_seed);
    if (tsr->parsed())
      return cmd_train_sr(tsr_data, tsr_out, tsr_epochs, tsr_seed, tsr_minq, tsr_cfg);
    if (tr->parsed())
      return cmd_train(tr_cfg, tr_data, tr_proto, tr_variant, tr_seed, tr_epochs,
                       tr_out, tr_sr);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_proto, ev_out);
    if (dg->parsed()) return cmd_degrade(dg_in, dg_kernels, dg_scale, dg_out);
    if (rp->parsed()) return cmd_report(rp_root, rp_out);
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
