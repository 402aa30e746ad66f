#pragma once

#include <array>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cqil/checkpoint.hpp"
#include "cqil/config.hpp"
#include "cqil/corpus.hpp"
#include "cqil/metrics.hpp"
#include "cqil/optimizer.hpp"
#include "cqil/sqn.hpp"
#include "cqil/sres.hpp"

namespace cqil {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class ModelVariant { resnet_baseline, model1, model2, model3, model4 };
enum class TrainMode { intra, inter };

inline const char* to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::resnet_baseline: return "resnet_baseline";
    case ModelVariant::model1: return "model1";
    case ModelVariant::model2: return "model2";
    case ModelVariant::model3: return "model3";
    case ModelVariant::model4: return "model4";
  }
  return "?";
}

inline ModelVariant variant_from_string(const std::string& s) {
  for (ModelVariant v : {ModelVariant::resnet_baseline, ModelVariant::model1,
                         ModelVariant::model2, ModelVariant::model3, ModelVariant::model4})
    if (s == to_string(v)) return v;
  throw Error("unknown model variant: " + s);
}

inline const char* to_string(TrainMode m) {
  return m == TrainMode::intra ? "intra" : "inter";
}

inline TrainMode mode_from_string(const std::string& s) {
  if (s == "intra") return TrainMode::intra;
  if (s == "inter") return TrainMode::inter;
  throw Error("unknown train mode: " + s);
}

struct TrainConfig {
  // Loss weights for cls / contra / adv / cdc / mse.
  double lambda1 = 2.0, lambda2 = 1.5, lambda3 = 0.5, lambda4 = 1.5, lambda5 = 0.5;
  double lr = 2e-4;
  size_t batch_size = 6;
  size_t epochs = 10;
  double lr_decay = 0.2;
  size_t lr_decay_every = 1;  // epochs between decays
  double tau = 0.99;
  uint64_t seed = 0;
  TrainMode mode = TrainMode::intra;
  ModelVariant variant = ModelVariant::model4;

  size_t image_size = 64;
  size_t encoder_base = 64;
  size_t proj_hidden = 256, proj_dim = 128;
  size_t cls_hidden = 256;
  size_t disc_hidden = 64;
  double cdc_theta = 0.7;
  double lambda_grl = 1.0;
  bool grl_warmup = false;
  bool joint_sr = false;  // when false the restoration net is frozen and
                          // lambda5 * L_mse is evaluated detached
  size_t sr_feat_ch = 64, sr_map_ch = 32;

  // Degradation applied before pair construction (no noise: pairs come from
  // interpolation and blurring only).
  int pair_scale = 2;
  int pair_kernel = 3;
  double pair_sigma = 0.0;
  double pair_noise = 0.0;

  static TrainConfig intra_defaults() {
    TrainConfig c;
    c.mode = TrainMode::intra;
    c.epochs = 10;
    c.lr_decay_every = 1;
    return c;
  }

  static TrainConfig inter_defaults() {
    TrainConfig c;
    c.mode = TrainMode::inter;
    c.epochs = 300;
    c.lr_decay_every = 50;
    return c;
  }

  DegradeParams pair_degrade() const {
    return DegradeParams{pair_scale, pair_kernel, pair_sigma, pair_noise};
  }

  void validate() const {
    CQIL_CHECK_MSG(lr > 0 && batch_size > 0 && lr_decay > 0 && lr_decay_every > 0,
                   "invalid training hyperparameters");
    CQIL_CHECK_MSG(tau >= 0.0 && tau <= 1.0, "tau must be in [0,1]");
    CQIL_CHECK_MSG(lambda_grl >= 0.0, "lambda_grl must be >= 0");
    CQIL_CHECK_MSG(encoder_base >= 4, "encoder_base too small");
    pair_degrade().validate();
  }

  Config to_config() const {
    Config c;
    c.set("lambda1", lambda1);
    c.set("lambda2", lambda2);
    c.set("lambda3", lambda3);
    c.set("lambda4", lambda4);
    c.set("lambda5", lambda5);
    c.set("lr", lr);
    c.set("batch_size", static_cast<uint64_t>(batch_size));
    c.set("epochs", static_cast<uint64_t>(epochs));
    c.set("lr_decay", lr_decay);
    c.set("lr_decay_every", static_cast<uint64_t>(lr_decay_every));
    c.set("tau", tau);
    c.set("seed", seed);
    c.set("mode", std::string(to_string(mode)));
    c.set("variant", std::string(to_string(variant)));
    c.set("image_size", static_cast<uint64_t>(image_size));
    c.set("encoder_base", static_cast<uint64_t>(encoder_base));
    c.set("proj_hidden", static_cast<uint64_t>(proj_hidden));
    c.set("proj_dim", static_cast<uint64_t>(proj_dim));
    c.set("cls_hidden", static_cast<uint64_t>(cls_hidden));
    c.set("disc_hidden", static_cast<uint64_t>(disc_hidden));
    c.set("cdc_theta", cdc_theta);
    c.set("lambda_grl", lambda_grl);
    c.set("grl_warmup", grl_warmup);
    c.set("joint_sr", joint_sr);
    c.set("sr_feat_ch", static_cast<uint64_t>(sr_feat_ch));
    c.set("sr_map_ch", static_cast<uint64_t>(sr_map_ch));
    c.set("pair_scale", static_cast<uint64_t>(pair_scale));
    c.set("pair_kernel", static_cast<uint64_t>(pair_kernel));
    c.set("pair_sigma", pair_sigma);
    c.set("pair_noise", pair_noise);
    return c;
  }

  static TrainConfig from_config(const Config& c) {
    TrainConfig d;
    if (c.has("mode")) {
      d.mode = mode_from_string(c.get_string("mode", "intra"));
      d = d.mode == TrainMode::intra ? intra_defaults() : inter_defaults();
    }
    d.lambda1 = c.get_double("lambda1", d.lambda1);
    d.lambda2 = c.get_double("lambda2", d.lambda2);
    d.lambda3 = c.get_double("lambda3", d.lambda3);
    d.lambda4 = c.get_double("lambda4", d.lambda4);
    d.lambda5 = c.get_double("lambda5", d.lambda5);
    d.lr = c.get_double("lr", d.lr);
    d.batch_size = c.get_uint("batch_size", d.batch_size);
    d.epochs = c.get_uint("epochs", d.epochs);
    d.lr_decay = c.get_double("lr_decay", d.lr_decay);
    d.lr_decay_every = c.get_uint("lr_decay_every", d.lr_decay_every);
    d.tau = c.get_double("tau", d.tau);
    d.seed = c.get_uint("seed", d.seed);
    d.variant = variant_from_string(c.get_string("variant", to_string(d.variant)));
    d.image_size = c.get_uint("image_size", d.image_size);
    d.encoder_base = c.get_uint("encoder_base", d.encoder_base);
    d.proj_hidden = c.get_uint("proj_hidden", d.proj_hidden);
    d.proj_dim = c.get_uint("proj_dim", d.proj_dim);
    d.cls_hidden = c.get_uint("cls_hidden", d.cls_hidden);
    d.disc_hidden = c.get_uint("disc_hidden", d.disc_hidden);
    d.cdc_theta = c.get_double("cdc_theta", d.cdc_theta);
    d.lambda_grl = c.get_double("lambda_grl", d.lambda_grl);
    d.grl_warmup = c.get_bool("grl_warmup", d.grl_warmup);
    d.joint_sr = c.get_bool("joint_sr", d.joint_sr);
    d.sr_feat_ch = c.get_uint("sr_feat_ch", d.sr_feat_ch);
    d.sr_map_ch = c.get_uint("sr_map_ch", d.sr_map_ch);
    d.pair_scale = static_cast<int>(c.get_uint("pair_scale", d.pair_scale));
    d.pair_kernel = static_cast<int>(c.get_uint("pair_kernel", d.pair_kernel));
    d.pair_sigma = c.get_double("pair_sigma", d.pair_sigma);
    d.pair_noise = c.get_double("pair_noise", d.pair_noise);
    d.validate();
    return d;
  }
};

// ---------------------------------------------------------------------------
// Eq. 6 arithmetic
// ---------------------------------------------------------------------------

struct LossComponents {
  double cls = 0, contra = 0, adv = 0, cdc = 0, mse = 0;
};

struct LossWeights {
  double l1 = 2.0, l2 = 1.5, l3 = 0.5, l4 = 1.5, l5 = 0.5;
};

inline double total_loss(const LossComponents& c, const LossWeights& w) {
  for (double v : {c.cls, c.contra, c.adv, c.cdc, c.mse})
    CQIL_CHECK_MSG(std::isfinite(v), "non-finite loss component: cls="
                                         << c.cls << " contra=" << c.contra
                                         << " adv=" << c.adv << " cdc=" << c.cdc
                                         << " mse=" << c.mse);
  return w.l1 * c.cls + w.l2 * c.contra + w.l3 * c.adv + w.l4 * c.cdc + w.l5 * c.mse;
}

// ---------------------------------------------------------------------------
// Data handling
// ---------------------------------------------------------------------------

template <typename T>
struct DataItem {
  Tensor<T> image;
  Liveness liveness = Liveness::live;
  int subject_id = 0;
  double quality_score = 0.0;
  std::string path;
};

template <typename T>
using Dataset = std::vector<DataItem<T>>;

template <typename T>
Dataset<T> load_dataset(const std::vector<SampleRecord>& records) {
  Dataset<T> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    DataItem<T> item;
    item.image = read_ppm<T>(r.path);
    item.liveness = r.liveness;
    item.subject_id = r.subject_id;
    item.quality_score = r.quality_score;
    item.path = r.path;
    out.push_back(std::move(item));
  }
  return out;
}

template <typename T>
Tensor<T> stack_images(const std::vector<const Tensor<T>*>& imgs) {
  CQIL_CHECK(!imgs.empty());
  const size_t c = imgs[0]->dim(0), h = imgs[0]->dim(1), w = imgs[0]->dim(2);
  Tensor<T> batch({imgs.size(), c, h, w});
  for (size_t i = 0; i < imgs.size(); ++i) {
    CQIL_CHECK_MSG(imgs[i]->same_shape(*imgs[0]), "batch images differ in shape");
    std::copy(imgs[i]->data(), imgs[i]->data() + imgs[i]->numel(),
              batch.data() + i * c * h * w);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Model state
// ---------------------------------------------------------------------------

template <typename T>
struct ModelState {
  TrainConfig cfg;

  SRNetwork<T> sr;
  OnlineNetwork<T> online;
  TargetNetwork<T> target;
  SqnBranch<T> sqn;
  Mlp<T> classifier;

  Adam<T> adam;
  size_t epoch = 0;

  explicit ModelState(const TrainConfig& config) : cfg(config) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, "model-init"));
    sr = SRNetwork<T>(rng, cfg.sr_feat_ch, cfg.sr_map_ch);
    online = OnlineNetwork<T>(cfg.encoder_base, cfg.proj_hidden, cfg.proj_dim, rng);
    target = TargetNetwork<T>(cfg.encoder_base, cfg.proj_hidden, cfg.proj_dim, rng);
    sqn = SqnBranch<T>(cfg.encoder_base, static_cast<T>(cfg.cdc_theta),
                       cfg.disc_hidden, static_cast<T>(cfg.lambda_grl), rng);
    classifier = Mlp<T>(classifier_input_dim(), cfg.cls_hidden, 2, rng);
    classifier.l2.w.value().fill(T(0));

    // BYOL-style start: the target network begins as a copy of the online
    // network and is only ever moved by the EMA.
    ParamList<T> tgt = target_params(), onl = online_ema_sources();
    copy_params(tgt, onl);
    set_requires_grad(tgt, false);
    ParamList<T> srp = sr.params();
    set_requires_grad(srp, cfg.joint_sr);

    adam.init(trainable_params());
  }

  bool has_contrastive() const { return cfg.variant != ModelVariant::resnet_baseline; }
  bool has_sqn() const {
    return cfg.variant == ModelVariant::model2 || cfg.variant == ModelVariant::model3 ||
           cfg.variant == ModelVariant::model4;
  }
  bool uses_sr_pairs() const {
    return cfg.variant == ModelVariant::model3 || cfg.variant == ModelVariant::model4;
  }
  bool cqi_takes_enhanced() const { return cfg.variant == ModelVariant::model4; }

  size_t classifier_input_dim() const {
    const size_t feat = cfg.encoder_base * 8;
    return has_sqn() ? 2 * feat : feat;
  }

  ParamList<T> online_ema_sources() const {
    ParamList<T> p;
    online.collect_ema_sources("online", p);
    return p;
  }

  ParamList<T> target_params() const {
    ParamList<T> p;
    target.collect("target", p);
    return p;
  }

  ParamList<T> trainable_params() const {
    ParamList<T> p;
    if (has_contrastive()) online.collect("online", p);
    else online.encoder.collect("online.enc", p);
    if (has_sqn()) sqn.collect("sqn", p);
    classifier.collect("cls", p);
    if (cfg.joint_sr && uses_sr_pairs()) sr.collect("sr", p);
    return p;
  }

  ParamList<T> checkpoint_params() const {
    ParamList<T> p;
    online.collect("online", p);
    target.collect("target", p);
    sqn.collect("sqn", p);
    classifier.collect("cls", p);
    sr.collect("sr", p);
    return p;
  }

  void load_sr(const SRNetwork<T>& pretrained) {
    ParamList<T> dst = sr.params(), src = pretrained.params();
    copy_params(dst, src);
    set_requires_grad(dst, cfg.joint_sr);
  }
};

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

template <typename T>
void save_checkpoint(const ModelState<T>& state, const std::string& path) {
  TensorArchive<T> ar;
  ar.meta["config"] = state.cfg.to_config().serialize();
  ar.meta["config_digest"] = state.cfg.to_config().digest();
  ar.meta["seed"] = state.cfg.seed;
  ar.meta["epoch"] = state.epoch;
  ar.meta["adam_steps"] = state.adam.step_count();
  for (const auto& p : state.checkpoint_params()) ar.put(p.name, p.var.value());
  ModelState<T>& mut = const_cast<ModelState<T>&>(state);
  ParamList<T> trainable = state.trainable_params();
  CQIL_CHECK(trainable.size() == mut.adam.num_slots());
  for (size_t i = 0; i < trainable.size(); ++i) {
    ar.put(trainable[i].name + ".adam_m", mut.adam.slot_m(i));
    ar.put(trainable[i].name + ".adam_v", mut.adam.slot_v(i));
  }
  ar.save(path);
}

// Rebuilds the model from the configuration embedded in the checkpoint. If
// expected_digest is non-empty and differs, a warning is printed (the stored
// configuration wins).
template <typename T>
ModelState<T> load_checkpoint(const std::string& path,
                              const std::string& expected_digest = "") {
  TensorArchive<T> ar = TensorArchive<T>::load(path);
  const std::string cfg_text = ar.meta.at("config").template get<std::string>();
  const std::string digest = ar.meta.value("config_digest", "");
  if (!expected_digest.empty() && expected_digest != digest)
    std::cerr << "warning: checkpoint " << path << " config digest " << digest
              << " does not match expected " << expected_digest << "\n";
  TrainConfig cfg = TrainConfig::from_config(Config::parse(cfg_text));
  ModelState<T> state(cfg);
  state.epoch = ar.meta.value("epoch", size_t{0});
  for (auto& p : state.checkpoint_params()) {
    const Tensor<T>& stored = ar.get(p.name);
    CQIL_CHECK_MSG(stored.same_shape(p.var.value()),
                   "checkpoint array " << p.name << " has shape " << stored.shape_str()
                                       << ", model expects "
                                       << p.var.value().shape_str());
    p.var.value() = stored;
  }
  ParamList<T> trainable = state.trainable_params();
  state.adam.init(trainable);
  state.adam.set_step_count(ar.meta.value("adam_steps", size_t{0}));
  for (size_t i = 0; i < trainable.size(); ++i) {
    if (ar.has(trainable[i].name + ".adam_m")) {
      state.adam.slot_m(i) = ar.get(trainable[i].name + ".adam_m");
      state.adam.slot_v(i) = ar.get(trainable[i].name + ".adam_v");
    }
  }
  return state;
}

// ---------------------------------------------------------------------------
// Training step
// ---------------------------------------------------------------------------

struct StepStats {
  LossComponents comps;
  double total = 0;
  size_t disc_correct = 0, disc_count = 0;
  size_t aux_correct = 0, aux_count = 0;
};

namespace detail {
template <typename T>
size_t count_argmax_matches(const Tensor<T>& logits, const std::vector<int>& labels) {
  size_t correct = 0;
  const size_t n = logits.dim(0), k = logits.dim(1);
  for (size_t i = 0; i < n; ++i) {
    size_t best = 0;
    for (size_t j = 1; j < k; ++j)
      if (logits.at2(i, j) > logits.at2(i, best)) best = j;
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return correct;
}
}  // namespace detail

// Per-fit cache of degraded inputs and frozen-restoration outputs; valid
// because both are pure functions of the sample when pair_noise == 0 and the
// restoration net is frozen.
template <typename T>
struct PairCache {
  std::vector<Tensor<T>> lq, enhanced;
  std::vector<char> ready;
};

template <typename T>
StepStats train_step(ModelState<T>& state, const Dataset<T>& data,
                     const std::vector<size_t>& batch, double lr, size_t epoch,
                     double grl_scale = 1.0, PairCache<T>* cache = nullptr) {
  CQIL_CHECK_MSG(!batch.empty(), "empty batch");
  const TrainConfig& cfg = state.cfg;
  const size_t B = batch.size();

  std::vector<int> liveness_labels(B);
  std::vector<const Tensor<T>*> raw_ptrs(B);
  for (size_t i = 0; i < B; ++i) {
    const auto& item = data[batch[i]];
    liveness_labels[i] = item.liveness == Liveness::live ? 1 : 0;
    raw_ptrs[i] = &item.image;
  }

  state.sqn.lambda_grl = static_cast<T>(cfg.lambda_grl * grl_scale);

  StepStats stats;
  std::vector<Var<T>> loss_terms;  // already weighted
  LossComponents comps;

  // -- pair construction ----------------------------------------------------
  Tensor<T> enh_batch, orig_batch;
  Var<T> enh_var;  // graph-visible in joint mode
  const bool needs_pairs = state.has_contrastive();
  if (needs_pairs) {
    std::vector<Tensor<T>> enh(B), orig(B);
    if (state.uses_sr_pairs()) {
      const DegradeParams dp = cfg.pair_degrade();
      const bool frozen = !cfg.joint_sr;
      for (size_t i = 0; i < B; ++i) {
        const auto& item = data[batch[i]];
        const size_t gi = batch[i];
        if (frozen && cache && gi < cache->ready.size() && cache->ready[gi]) {
          orig[i] = cache->lq[gi];
          enh[i] = cache->enhanced[gi];
          continue;
        }
        uint64_t nseed = derive_seed(cfg.seed, {epoch, detail::fnv1a64(item.path)});
        orig[i] = degrade(item.image, dp, nseed);
        if (frozen) {
          enh[i] = sr_forward(state.sr, orig[i]);
          if (cache && gi < cache->ready.size()) {
            cache->lq[gi] = orig[i];
            cache->enhanced[gi] = enh[i];
            cache->ready[gi] = 1;
          }
        }
      }
      std::vector<const Tensor<T>*> optr(B);
      for (size_t i = 0; i < B; ++i) optr[i] = &orig[i];
      orig_batch = stack_images(optr);
      if (cfg.joint_sr) {
        enh_var = state.sr.forward(Var<T>::constant(orig_batch));
        enh_batch = enh_var.value();
      } else {
        std::vector<const Tensor<T>*> eptr(B);
        for (size_t i = 0; i < B; ++i) eptr[i] = &enh[i];
        enh_batch = stack_images(eptr);
      }
    } else {
      for (size_t i = 0; i < B; ++i) {
        const auto& item = data[batch[i]];
        QualityPair<T> pair =
            interpolation_pair(item.image, item.liveness, cfg.pair_scale);
        enh[i] = std::move(pair.enhanced);
        orig[i] = std::move(pair.original);
      }
      std::vector<const Tensor<T>*> eptr(B), optr(B);
      for (size_t i = 0; i < B; ++i) {
        eptr[i] = &enh[i];
        optr[i] = &orig[i];
      }
      enh_batch = stack_images(eptr);
      orig_batch = stack_images(optr);
    }
  }

  // -- contrastive branch -----------------------------------------------
  if (state.has_contrastive()) {
    Var<T> enh_in = cfg.joint_sr && state.uses_sr_pairs()
                        ? enh_var
                        : Var<T>::constant(enh_batch);
    Var<T> orig_in = Var<T>::constant(orig_batch);

    Var<T> q_enh = state.online.prediction(enh_in);
    Var<T> q_orig = state.online.prediction(orig_in);
    // Target path carries no gradient: its parameters are frozen leaves.
    Tensor<T> z_orig = state.target.projection(orig_batch);
    Tensor<T> z_enh = state.target.projection(enh_batch);

    Var<T> l_contra = add(mean_all(contrastive_terms(q_enh, z_orig)),
                          mean_all(contrastive_terms(q_orig, z_enh)));
    comps.contra = static_cast<double>(l_contra.value()[0]);
    loss_terms.push_back(scale(l_contra, static_cast<T>(cfg.lambda2)));
  }

  // -- SQN branch ---------------------------------------------------------
  Var<T> cqi_feat_designated;
  if (state.has_sqn()) {
    Var<T> enh_in = cfg.joint_sr && state.uses_sr_pairs()
                        ? enh_var
                        : Var<T>::constant(enh_batch);
    Var<T> feats_enh = state.sqn.features(enh_in);
    Var<T> feats_orig = state.sqn.features(Var<T>::constant(orig_batch));

    std::vector<int> label_enh(B, QualityPair<T>::kEnhancedQualityLabel);
    std::vector<int> label_orig(B, QualityPair<T>::kOriginalQualityLabel);
    Var<T> disc_enh = state.sqn.disc_logits(feats_enh);
    Var<T> disc_orig = state.sqn.disc_logits(feats_orig);
    Var<T> l_adv = scale(add(adversarial_loss(disc_enh, label_enh),
                             adversarial_loss(disc_orig, label_orig)),
                         T(0.5));
    comps.adv = static_cast<double>(l_adv.value()[0]);
    loss_terms.push_back(scale(l_adv, static_cast<T>(cfg.lambda3)));
    stats.disc_correct += detail::count_argmax_matches(disc_enh.value(), label_enh);
    stats.disc_correct += detail::count_argmax_matches(disc_orig.value(), label_orig);
    stats.disc_count += 2 * B;

    cqi_feat_designated = state.cqi_takes_enhanced() ? feats_enh : feats_orig;
    Var<T> aux_logits = state.sqn.aux_logits(cqi_feat_designated);
    Var<T> l_cdc = softmax_cross_entropy(aux_logits, liveness_labels);
    comps.cdc = static_cast<double>(l_cdc.value()[0]);
    loss_terms.push_back(scale(l_cdc, static_cast<T>(cfg.lambda4)));
    stats.aux_correct += detail::count_argmax_matches(aux_logits.value(), liveness_labels);
    stats.aux_count += B;
  }

  // -- main classifier ------------------------------------------------------
  {
    Var<T> online_feat_raw =
        state.online.features(Var<T>::constant(stack_images(raw_ptrs)));
    Var<T> cls_in = state.has_sqn()
                        ? concat_features(cqi_feat_designated, online_feat_raw)
                        : online_feat_raw;
    Var<T> l_cls = softmax_cross_entropy(state.classifier.forward(cls_in),
                                         liveness_labels);
    comps.cls = static_cast<double>(l_cls.value()[0]);
    loss_terms.push_back(scale(l_cls, static_cast<T>(cfg.lambda1)));
  }

  // -- restoration loss -------------------------------------------------
  if (state.uses_sr_pairs()) {
    Var<T> clean = Var<T>::constant(stack_images(raw_ptrs));
    if (cfg.joint_sr) {
      Var<T> l_mse = mse_loss(enh_var, clean);
      comps.mse = static_cast<double>(l_mse.value()[0]);
      loss_terms.push_back(scale(l_mse, static_cast<T>(cfg.lambda5)));
    } else {
      comps.mse = mse_value(enh_batch, clean.value());
    }
  }

  // -- Eq. 6 combination and update -----------------------------------------
  LossWeights w{cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.lambda4, cfg.lambda5};
  stats.comps = comps;
  stats.total = total_loss(comps, w);  // validates finiteness

  Var<T> graph_loss = loss_terms.front();
  for (size_t i = 1; i < loss_terms.size(); ++i)
    graph_loss = add(graph_loss, loss_terms[i]);

  ParamList<T> trainable = state.trainable_params();
  zero_grads(trainable);
  backward(graph_loss);
  state.adam.step(trainable, lr);

  if (state.has_contrastive()) {
    ParamList<T> tgt = state.target_params();
    ParamList<T> onl = state.online_ema_sources();
    std::vector<Var<T>> tgt_v = param_vars(tgt), onl_v = param_vars(onl);
    ema_update(tgt_v, onl_v, static_cast<T>(cfg.tau));
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

// Liveness score in [0,1]: softmax probability of the live class. The CQI
// input follows the variant (restored image for model4, raw otherwise).
template <typename T>
double predict(const ModelState<T>& state, const Tensor<T>& image,
               const Tensor<T>* cached_enhanced = nullptr) {
  CQIL_CHECK_MSG(image.ndim() == 3 && image.dim(0) == 3,
                 "predict wants a 3xHxW image");
  std::vector<const Tensor<T>*> one{&image};
  Var<T> online_feat = state.online.features(Var<T>::constant(stack_images(one)));
  Var<T> cls_in = online_feat;
  if (state.has_sqn()) {
    Tensor<T> cqi_img = image;
    if (state.cqi_takes_enhanced())
      cqi_img = cached_enhanced ? *cached_enhanced : sr_forward(state.sr, image);
    std::vector<const Tensor<T>*> onec{&cqi_img};
    Var<T> cqi_feat = state.sqn.features(Var<T>::constant(stack_images(onec)));
    cls_in = concat_features(cqi_feat, online_feat);
  }
  Var<T> logits = state.classifier.forward(cls_in);
  const double l0 = logits.value().at2(0, 0), l1 = logits.value().at2(0, 1);
  const double m = std::max(l0, l1);
  const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
  return e1 / (e0 + e1);
}

// Scores a whole dataset. For variants with a frozen restoration net the
// restored images are cached between calls.
template <typename T>
ScoredSet score_dataset(const ModelState<T>& state, const Dataset<T>& data,
                        std::vector<Tensor<T>>* sr_cache = nullptr) {
  ScoredSet set;
  const bool cacheable =
      state.cqi_takes_enhanced() && !state.cfg.joint_sr && sr_cache != nullptr;
  if (cacheable && sr_cache->empty()) {
    sr_cache->reserve(data.size());
    for (const auto& item : data) sr_cache->push_back(sr_forward(state.sr, item.image));
  }
  for (size_t i = 0; i < data.size(); ++i) {
    const Tensor<T>* enh = cacheable ? &(*sr_cache)[i] : nullptr;
    set.add(predict(state, data[i].image, enh), data[i].liveness);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Full training run
// ---------------------------------------------------------------------------

struct EpochRow {
  size_t epoch = 0;
  double lr = 0;
  LossComponents comps;
  double total = 0;
  double dev_acer = 0, dev_auc = 0;
  double disc_acc = 0, aux_acc = 0;
};

inline constexpr const char* kEpochCsvHeader =
    "epoch,lr,loss_total,loss_cls,loss_contra,loss_adv,loss_cdc,loss_mse,"
    "dev_acer,dev_auc,disc_acc,aux_acc";

inline std::string epoch_row_csv(const EpochRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%zu,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.6f,%.6f,%.4f,%.4f",
                r.epoch, r.lr, r.total, r.comps.cls, r.comps.contra, r.comps.adv,
                r.comps.cdc, r.comps.mse, r.dev_acer, r.dev_auc, r.disc_acc, r.aux_acc);
  return buf;
}

template <typename T>
struct FitResult {
  std::vector<EpochRow> rows;
  size_t best_epoch = 0;
  double best_dev_acer = 1.0;
  MetricsReport test_report;
  double final_threshold = 0.0;
};

struct FitOptions {
  std::string run_dir;  // empty: nothing written
  bool verbose = false;
};

template <typename T>
FitResult<T> fit(ModelState<T>& state, const ProtocolSplits& splits,
                 const FitOptions& opts = {}) {
  namespace fs = std::filesystem;
  splits.validate();
  const TrainConfig& cfg = state.cfg;

  Dataset<T> train_data = load_dataset<T>(splits.train);
  Dataset<T> dev_data = load_dataset<T>(splits.dev);
  Dataset<T> test_data = load_dataset<T>(splits.test);

  std::ofstream csv;
  if (!opts.run_dir.empty()) {
    fs::create_directories(opts.run_dir);
    state.cfg.to_config().save((fs::path(opts.run_dir) / "config.txt").string());
    csv.open((fs::path(opts.run_dir) / "epochs.csv").string(), std::ios::binary);
    csv << kEpochCsvHeader << "\n";
  }

  FitResult<T> result;
  PairCache<T> cache;
  cache.lq.resize(train_data.size());
  cache.enhanced.resize(train_data.size());
  cache.ready.assign(train_data.size(), 0);

  std::vector<size_t> order(train_data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::optional<TensorArchive<T>> best_snapshot;
  std::vector<Tensor<T>> dev_sr_cache, test_sr_cache;
  const size_t steps_per_epoch =
      (train_data.size() + cfg.batch_size - 1) / cfg.batch_size;

  for (size_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    const double lr =
        cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_decay_every));
    Rng shuffle_rng(derive_seed(cfg.seed, {0xe70c0ULL, epoch}));
    shuffle_rng.shuffle(order);

    EpochRow row;
    row.epoch = epoch;
    row.lr = lr;
    size_t steps = 0, disc_c = 0, disc_n = 0, aux_c = 0, aux_n = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t bsz = std::min(cfg.batch_size, order.size() - start);
      std::vector<size_t> batch(order.begin() + start, order.begin() + start + bsz);
      double grl_scale = 1.0;
      if (cfg.grl_warmup && epoch == 0)
        grl_scale = static_cast<double>(steps + 1) / steps_per_epoch;
      StepStats st = train_step(state, train_data, batch, lr, epoch, grl_scale, &cache);
      row.total += st.total;
      row.comps.cls += st.comps.cls;
      row.comps.contra += st.comps.contra;
      row.comps.adv += st.comps.adv;
      row.comps.cdc += st.comps.cdc;
      row.comps.mse += st.comps.mse;
      disc_c += st.disc_correct;
      disc_n += st.disc_count;
      aux_c += st.aux_correct;
      aux_n += st.aux_count;
      ++steps;
    }
    row.total /= steps;
    row.comps.cls /= steps;
    row.comps.contra /= steps;
    row.comps.adv /= steps;
    row.comps.cdc /= steps;
    row.comps.mse /= steps;
    row.disc_acc = disc_n ? static_cast<double>(disc_c) / disc_n : 0.0;
    row.aux_acc = aux_n ? static_cast<double>(aux_c) / aux_n : 0.0;

    ScoredSet dev_scores = score_dataset(state, dev_data, &dev_sr_cache);
    const double thr = select_threshold(dev_scores);
    row.dev_acer = apcer_bpcer_acer(dev_scores, thr).acer;
    row.dev_auc = auc(dev_scores);

    state.epoch = epoch + 1;
    result.rows.push_back(row);
    if (csv.is_open()) csv << epoch_row_csv(row) << "\n";
    if (opts.verbose)
      std::cerr << "epoch " << epoch << " lr " << lr << " loss " << row.total
                << " dev_acer " << row.dev_acer << "\n";

    if (row.dev_acer < result.best_dev_acer) {
      result.best_dev_acer = row.dev_acer;
      result.best_epoch = epoch;
      best_snapshot.emplace();
      for (const auto& p : state.checkpoint_params())
        best_snapshot->put(p.name, p.var.value());
      if (!opts.run_dir.empty())
        save_checkpoint(state, (fs::path(opts.run_dir) / "best.ckpt").string());
    }
  }

  if (!opts.run_dir.empty())
    save_checkpoint(state, (fs::path(opts.run_dir) / "final.ckpt").string());

  // Final report uses the best-dev-ACER parameters.
  if (best_snapshot) {
    for (auto& p : state.checkpoint_params())
      p.var.value() = best_snapshot->get(p.name);
    test_sr_cache.clear();
    dev_sr_cache.clear();
  }
  ScoredSet dev_scores = score_dataset(state, dev_data, &dev_sr_cache);
  ScoredSet test_scores = score_dataset(state, test_data, &test_sr_cache);
  result.test_report = evaluate_sets(dev_scores, test_scores,
                                     to_string(splits.protocol_id),
                                     to_string(cfg.variant));
  result.final_threshold = result.test_report.threshold;
  if (!opts.run_dir.empty()) {
    write_report_json(result.test_report,
                      (fs::path(opts.run_dir) / "report.json").string());
    write_report_csv(result.test_report,
                     (fs::path(opts.run_dir) / "report.csv").string());
  }
  return result;
}

}  // namespace cqil
