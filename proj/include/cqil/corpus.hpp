#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cqil/degrade.hpp"
#include "cqil/image.hpp"
#include "cqil/manifest.hpp"
#include "cqil/rng.hpp"

#include <json.hpp>

namespace cqil {

// ---------------------------------------------------------------------------
// Synthetic surveillance-style corpus. Faces are procedural: an elliptical
// head with smooth radial shading, eye and mouth blobs, on a flat background.
// Each category overlays its own signature (formulas documented in the
// README):
//   live          smooth shading + fine stochastic grain
//   print         halftone screen lattice + desaturation, almost no grain
//   replay        additive oblique moire banding + blue channel lift
//   mask_*        posterised (region-flattened) shading + family-specific
//                 boundary artifact (ring width/position/count, specular
//                 highlight for resin, extended cap for headgear)
// Generation is a pure function of (spec, seed): every record draws from its
// own derived RNG stream, so output does not depend on generation order.
// ---------------------------------------------------------------------------

inline std::vector<DegradeParams> default_quality_tiers() {
  return {
      DegradeParams::identity(),
      DegradeParams{1, 3, 0.45, 0.0},
      DegradeParams{1, 3, 0.65, 0.0},
      DegradeParams{2, 5, 1.1, 0.0},
  };
}

inline std::vector<AttackCategory> all_categories() {
  return {AttackCategory::none,         AttackCategory::mask_resin,
          AttackCategory::mask_silicone, AttackCategory::mask_plaster,
          AttackCategory::mask_headgear, AttackCategory::print,
          AttackCategory::replay};
}

struct CorpusSpec {
  int n_subjects = 8;
  int images_per_subject_per_category = 2;
  size_t image_size = 64;
  std::vector<DegradeParams> quality_tiers = default_quality_tiers();
  uint64_t rng_seed = 0;
  std::vector<AttackCategory> categories = all_categories();

  void validate() const {
    CQIL_CHECK_MSG(n_subjects >= 4, "n_subjects must be >= 4");
    CQIL_CHECK_MSG(images_per_subject_per_category >= 1, "need at least one image");
    CQIL_CHECK_MSG(image_size >= 16 && (image_size & (image_size - 1)) == 0,
                   "image_size must be a power of two >= 16");
    CQIL_CHECK_MSG(!quality_tiers.empty(), "quality_tiers must be non-empty");
    CQIL_CHECK_MSG(!categories.empty(), "categories must be non-empty");
    for (const auto& t : quality_tiers) t.validate();
  }
};

struct CorpusMeta {
  double quality_calibration = kDefaultQualityCalibration;
  uint64_t seed = 0;
  size_t image_size = 0;
  size_t n_records = 0;
};

inline void write_corpus_meta(const CorpusMeta& meta, const std::string& path) {
  nlohmann::json j;
  j["quality_calibration"] = meta.quality_calibration;
  j["seed"] = meta.seed;
  j["image_size"] = meta.image_size;
  j["n_records"] = meta.n_records;
  std::ofstream f(path, std::ios::binary);
  CQIL_CHECK_MSG(f.good(), "cannot write " << path);
  f << j.dump(2) << "\n";
}

inline CorpusMeta read_corpus_meta(const std::string& path) {
  std::ifstream f(path);
  CQIL_CHECK_MSG(f.good(), "cannot read corpus meta " << path);
  nlohmann::json j;
  f >> j;
  CorpusMeta meta;
  meta.quality_calibration = j.at("quality_calibration").get<double>();
  meta.seed = j.at("seed").get<uint64_t>();
  meta.image_size = j.at("image_size").get<size_t>();
  meta.n_records = j.at("n_records").get<size_t>();
  return meta;
}

namespace synth {

struct SubjectParams {
  double cu, cv;         // face centre
  double ru, rv;         // face radii (normalised)
  double tone_r, tone_g, tone_b;
  double bg;
  double eye_dx, eye_dy, eye_r, eye_dark;
  double mouth_dy, mouth_w, mouth_dark;
};

inline SubjectParams subject_params(uint64_t seed, int subject) {
  Rng rng(derive_seed(seed, {0x5u, static_cast<uint64_t>(subject)}));
  SubjectParams p;
  p.cu = 0.5 + rng.uniform_range(-0.05, 0.05);
  p.cv = 0.5 + rng.uniform_range(-0.05, 0.05);
  p.ru = rng.uniform_range(0.26, 0.34);
  p.rv = rng.uniform_range(0.34, 0.42);
  p.tone_r = rng.uniform_range(0.55, 0.8);
  p.tone_g = p.tone_r - rng.uniform_range(0.05, 0.15);
  p.tone_b = p.tone_g - rng.uniform_range(0.05, 0.15);
  p.bg = rng.uniform_range(0.2, 0.45);
  p.eye_dx = rng.uniform_range(0.10, 0.15);
  p.eye_dy = rng.uniform_range(0.08, 0.14);
  p.eye_r = rng.uniform_range(0.035, 0.055);
  p.eye_dark = rng.uniform_range(0.25, 0.4);
  p.mouth_dy = rng.uniform_range(0.16, 0.24);
  p.mouth_w = rng.uniform_range(0.10, 0.16);
  p.mouth_dark = rng.uniform_range(0.15, 0.3);
  return p;
}

struct ImageJitter {
  double dcu, dcv, scale, brightness, grain_amp;
  double moire_angle, moire_freq, moire_phase;
  uint64_t grain_seed;
};

inline ImageJitter image_jitter(uint64_t seed, int subject, int category, int index) {
  Rng rng(derive_seed(seed, {0x11u, static_cast<uint64_t>(subject),
                             static_cast<uint64_t>(category),
                             static_cast<uint64_t>(index)}));
  ImageJitter j;
  j.dcu = rng.uniform_range(-0.02, 0.02);
  j.dcv = rng.uniform_range(-0.02, 0.02);
  j.scale = rng.uniform_range(0.95, 1.05);
  j.brightness = rng.uniform_range(-0.04, 0.04);
  j.grain_amp = rng.uniform_range(0.55, 1.35);
  j.moire_angle = rng.uniform_range(0.3, 1.2);
  j.moire_freq = rng.uniform_range(0.55, 0.8);  // cycles per 10 px
  j.moire_phase = rng.uniform_range(0.0, 2.0 * M_PI);
  j.grain_seed = rng.next_u64();
  return j;
}

inline double smoothstep01(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

// Renders the base (clean-tier) image for one record.
inline Tensor<float> render_face(const CorpusSpec& spec, int subject,
                                 AttackCategory cat, int image_index) {
  const size_t n = spec.image_size;
  SubjectParams sp = subject_params(spec.rng_seed, subject);
  ImageJitter jt = image_jitter(spec.rng_seed, subject, static_cast<int>(cat),
                                image_index);

  double cu = sp.cu + jt.dcu, cv = sp.cv + jt.dcv;
  double ru = sp.ru * jt.scale, rv = sp.rv * jt.scale;
  const bool headgear = cat == AttackCategory::mask_headgear;
  if (headgear) {
    ru *= 1.12;
    rv *= 1.12;
  }

  const bool mask = is_mask(cat);
  double grain_amp;
  switch (cat) {
    case AttackCategory::none: grain_amp = 0.03; break;
    case AttackCategory::print: grain_amp = 0.008; break;
    case AttackCategory::replay: grain_amp = 0.02; break;
    default: grain_amp = 0.015; break;  // mask materials are smooth
  }
  grain_amp *= jt.grain_amp;

  // Posterisation level count per mask family.
  int levels = 0;
  if (cat == AttackCategory::mask_resin) levels = 5;
  if (cat == AttackCategory::mask_silicone) levels = 4;
  if (cat == AttackCategory::mask_plaster) levels = 3;
  if (cat == AttackCategory::mask_headgear) levels = 4;

  Tensor<float> img({3, n, n});

  // Spatially correlated grain: blurred white noise renormalised to unit
  // standard deviation. Correlation keeps part of the texture below the
  // degradation cut-off, which matters for both restoration and liveness.
  Tensor<float> grain_plane({1, n, n});
  {
    Rng grain_rng(jt.grain_seed);
    for (size_t i = 0; i < grain_plane.numel(); ++i)
      grain_plane[i] = static_cast<float>(grain_rng.normal());
    grain_plane = gaussian_blur(grain_plane, 3, 0.7);
    double mean = 0, var = 0;
    for (size_t i = 0; i < grain_plane.numel(); ++i) mean += grain_plane[i];
    mean /= grain_plane.numel();
    for (size_t i = 0; i < grain_plane.numel(); ++i) {
      const double d = grain_plane[i] - mean;
      var += d * d;
    }
    var /= grain_plane.numel();
    const float inv_std = static_cast<float>(1.0 / std::sqrt(var));
    for (size_t i = 0; i < grain_plane.numel(); ++i)
      grain_plane[i] = (grain_plane[i] - static_cast<float>(mean)) * inv_std;
  }

  const double kx = jt.moire_freq / 10.0 * std::cos(jt.moire_angle);
  const double ky = jt.moire_freq / 10.0 * std::sin(jt.moire_angle);

  for (size_t y = 0; y < n; ++y) {
    for (size_t x = 0; x < n; ++x) {
      const double u = (x + 0.5) / n, v = (y + 0.5) / n;
      const double du = (u - cu) / ru, dv = (v - cv) / rv;
      const double d = std::sqrt(du * du + dv * dv);

      // Shading factor inside the face, flat background outside.
      double shade = 1.0 - 0.38 * d * d;
      // Eyes.
      for (int sgn : {-1, 1}) {
        double eu = (u - (cu + sgn * sp.eye_dx)) / sp.eye_r;
        double ev = (v - (cv - sp.eye_dy)) / (0.7 * sp.eye_r);
        shade -= sp.eye_dark * std::exp(-(eu * eu + ev * ev));
      }
      // Mouth.
      {
        double mu = (u - cu) / sp.mouth_w;
        double mv = (v - (cv + sp.mouth_dy)) / (0.022);
        shade -= sp.mouth_dark * std::exp(-(mu * mu + mv * mv));
      }

      if (mask && levels > 0) {
        // Region-flattened material: quantise the shading into flat patches.
        shade = std::floor(shade * levels + 0.5) / levels;
        // Family-specific boundary artifact.
        switch (cat) {
          case AttackCategory::mask_resin:
            shade -= 0.38 * std::exp(-std::pow((d - 0.97) / 0.03, 2));
            shade += 0.20 * std::exp(-(std::pow((u - cu + 0.09) / 0.05, 2) +
                                       std::pow((v - cv + 0.14) / 0.05, 2)));
            break;
          case AttackCategory::mask_silicone:
            shade -= 0.2 * std::exp(-std::pow((d - 0.93) / 0.09, 2));
            break;
          case AttackCategory::mask_plaster:
            shade -= 0.3 * std::exp(-std::pow((d - 0.97) / 0.035, 2));
            shade -= 0.26 * std::exp(-std::pow((d - 0.78) / 0.035, 2));
            break;
          case AttackCategory::mask_headgear:
            shade -= 0.3 * std::exp(-std::pow((d - 1.0) / 0.07, 2));
            if (v < cv - 0.35 * rv && d < 1.0) shade *= 0.82;
            break;
          default: break;
        }
      }

      const double edge = smoothstep01((1.03 - d) / 0.07);
      double r = edge * sp.tone_r * shade + (1 - edge) * sp.bg;
      double g = edge * sp.tone_g * shade + (1 - edge) * (sp.bg * 0.96);
      double b = edge * sp.tone_b * shade + (1 - edge) * (sp.bg * 0.92);

      if (cat == AttackCategory::print) {
        // Halftone screen, period 4 px, plus flat print colours.
        const double screen =
            0.5 + 0.5 * std::sin(M_PI * x / 2.0) * std::sin(M_PI * y / 2.0);
        const double m = (r + g + b) / 3.0;
        r = m + 0.55 * (r - m);
        g = m + 0.55 * (g - m);
        b = m + 0.55 * (b - m);
        const double ht = 1.0 - 0.3 * screen;
        r *= ht;
        g *= ht;
        b *= ht;
      } else if (cat == AttackCategory::replay) {
        const double band =
            0.09 * std::sin(2.0 * M_PI * (kx * x + ky * y) + jt.moire_phase);
        r += band;
        g += band;
        b += band + 0.035;  // screen glow
      }

      const double grain = grain_amp * grain_plane.at3(0, y, x);
      const double bright = jt.brightness;
      img.at3(0, y, x) = static_cast<float>(r + grain + bright);
      img.at3(1, y, x) = static_cast<float>(g + grain + bright);
      img.at3(2, y, x) = static_cast<float>(b + grain + bright);
    }
  }
  clip01(img);
  return img;
}

// Matches what write_ppm/read_ppm round-trip, so manifest scores agree with
// scores recomputed from the files.
inline void quantize_to_bytes(Tensor<float>& img) {
  for (size_t i = 0; i < img.numel(); ++i) {
    double v = std::clamp(static_cast<double>(img[i]), 0.0, 1.0);
    img[i] = static_cast<float>(std::lround(v * 255.0) / 255.0);
  }
}

}  // namespace synth

struct GeneratedCorpus {
  std::vector<SampleRecord> records;
  CorpusMeta meta;
  std::string manifest_path;
  std::string meta_path;
};

// Generates the corpus under out_dir: images/, manifest.csv and
// corpus_meta.json. Bit-identical output for identical (spec, seed).
inline GeneratedCorpus generate_corpus(const CorpusSpec& spec,
                                       const std::string& out_dir) {
  namespace fs = std::filesystem;
  spec.validate();
  fs::create_directories(fs::path(out_dir) / "images");

  struct BaseImage {
    int subject;
    AttackCategory cat;
    int index;
    Tensor<float> image;
  };
  std::vector<BaseImage> bases;
  for (int s = 0; s < spec.n_subjects; ++s)
    for (AttackCategory cat : spec.categories)
      for (int i = 0; i < spec.images_per_subject_per_category; ++i)
        bases.push_back({s, cat, i, synth::render_face(spec, s, cat, i)});

  // Calibrate the quality constant so the median clean image scores 0.7.
  std::vector<double> variances;
  variances.reserve(bases.size());
  for (const auto& b : bases) variances.push_back(laplacian_variance(b.image));
  std::vector<double> sorted = variances;
  std::sort(sorted.begin(), sorted.end());
  const double median_v = sorted[sorted.size() / 2];
  CQIL_CHECK_MSG(median_v > 0.0, "degenerate corpus: zero Laplacian variance");
  const double calibration = median_v / std::log(10.0 / 3.0);  // -ln(1 - 0.7)

  GeneratedCorpus out;
  out.meta.quality_calibration = calibration;
  out.meta.seed = spec.rng_seed;
  out.meta.image_size = spec.image_size;

  char name[128];
  for (const auto& b : bases) {
    for (size_t t = 0; t < spec.quality_tiers.size(); ++t) {
      Tensor<float> img =
          degrade(b.image, spec.quality_tiers[t],
                  derive_seed(spec.rng_seed, {0x7fu, static_cast<uint64_t>(b.subject),
                                              static_cast<uint64_t>(b.cat),
                                              static_cast<uint64_t>(b.index), t}));
      synth::quantize_to_bytes(img);
      std::snprintf(name, sizeof(name), "s%03d_%s_i%02d_t%zu.ppm", b.subject,
                    to_string(b.cat), b.index, t);
      SampleRecord r;
      r.path = (fs::path(out_dir) / "images" / name).string();
      r.subject_id = b.subject;
      r.attack_category = b.cat;
      r.liveness = b.cat == AttackCategory::none ? Liveness::live : Liveness::attack;
      r.quality_score = score_quality(img, calibration);
      write_ppm(img, r.path);
      r.validate();
      out.records.push_back(std::move(r));
    }
  }

  out.meta.n_records = out.records.size();
  out.manifest_path = (fs::path(out_dir) / "manifest.csv").string();
  out.meta_path = (fs::path(out_dir) / "corpus_meta.json").string();
  write_manifest(out.records, out.manifest_path);
  write_corpus_meta(out.meta, out.meta_path);
  return out;
}

// ---------------------------------------------------------------------------
// Protocol splits
// ---------------------------------------------------------------------------

enum class ProtocolId { P1, P2_1, P2_2, P2_3, P2_4, P3 };

inline const char* to_string(ProtocolId p) {
  switch (p) {
    case ProtocolId::P1: return "P1";
    case ProtocolId::P2_1: return "P2.1";
    case ProtocolId::P2_2: return "P2.2";
    case ProtocolId::P2_3: return "P2.3";
    case ProtocolId::P2_4: return "P2.4";
    case ProtocolId::P3: return "P3";
  }
  return "?";
}

inline ProtocolId protocol_from_string(const std::string& s) {
  for (ProtocolId p : {ProtocolId::P1, ProtocolId::P2_1, ProtocolId::P2_2,
                       ProtocolId::P2_3, ProtocolId::P2_4, ProtocolId::P3})
    if (s == to_string(p)) return p;
  throw Error("unknown protocol id: " + s + " (use P1, P2.1..P2.4, P3)");
}

inline std::vector<ProtocolId> all_protocols() {
  return {ProtocolId::P1, ProtocolId::P2_1, ProtocolId::P2_2,
          ProtocolId::P2_3, ProtocolId::P2_4, ProtocolId::P3};
}

// The mask family held out for each sub-protocol of protocol 2.
inline AttackCategory held_out_mask(ProtocolId p) {
  switch (p) {
    case ProtocolId::P2_1: return AttackCategory::mask_headgear;
    case ProtocolId::P2_2: return AttackCategory::mask_plaster;
    case ProtocolId::P2_3: return AttackCategory::mask_silicone;
    case ProtocolId::P2_4: return AttackCategory::mask_resin;
    default: throw Error("held_out_mask: not a protocol-2 id");
  }
}

struct ProtocolSplits {
  ProtocolId protocol_id = ProtocolId::P1;
  std::vector<SampleRecord> train, dev, test;

  void validate() const;
};

inline void ProtocolSplits::validate() const {
  CQIL_CHECK_MSG(!train.empty(), "train subset empty");
  CQIL_CHECK_MSG(!dev.empty(), "dev subset empty");
  CQIL_CHECK_MSG(!test.empty(), "test subset empty");
  std::set<std::string> seen;
  for (const auto* subset : {&train, &dev, &test})
    for (const auto& r : *subset)
      CQIL_CHECK_MSG(seen.insert(r.path).second, "record in two subsets: " << r.path);

  if (protocol_id == ProtocolId::P1) {
    std::set<int> tr, dv, te;
    for (const auto& r : train) tr.insert(r.subject_id);
    for (const auto& r : dev) dv.insert(r.subject_id);
    for (const auto& r : test) te.insert(r.subject_id);
    for (int s : dv) CQIL_CHECK_MSG(!tr.count(s), "subject " << s << " in train and dev");
    for (int s : te)
      CQIL_CHECK_MSG(!tr.count(s) && !dv.count(s), "subject " << s << " leaks into test");
  } else if (protocol_id == ProtocolId::P3) {
    for (const auto& r : train)
      CQIL_CHECK_MSG(r.quality_score >= 0.4 && r.quality_score <= 1.0,
                     "P3 train score out of band: " << r.quality_score);
    for (const auto& r : dev)
      CQIL_CHECK_MSG(r.quality_score >= 0.3 && r.quality_score < 0.4,
                     "P3 dev score out of band: " << r.quality_score);
    for (const auto& r : test)
      CQIL_CHECK_MSG(r.quality_score >= 0.0 && r.quality_score < 0.3,
                     "P3 test score out of band: " << r.quality_score);
  } else {
    const AttackCategory held = held_out_mask(protocol_id);
    for (const auto& r : test)
      if (is_mask(r.attack_category))
        CQIL_CHECK_MSG(r.attack_category == held,
                       "non-held-out mask in test: " << to_string(r.attack_category));
    for (const auto* subset : {&train, &dev})
      for (const auto& r : *subset)
        CQIL_CHECK_MSG(r.attack_category != held,
                       "held-out mask leaked into train/dev: " << r.path);
    bool live_tr = false, live_dv = false, live_te = false;
    for (const auto& r : train) live_tr |= r.liveness == Liveness::live;
    for (const auto& r : dev) live_dv |= r.liveness == Liveness::live;
    for (const auto& r : test) live_te |= r.liveness == Liveness::live;
    CQIL_CHECK_MSG(live_tr && live_dv && live_te, "live samples missing from a subset");
  }
}

inline ProtocolSplits build_protocol_splits(const std::vector<SampleRecord>& manifest,
                                            ProtocolId protocol) {
  CQIL_CHECK_MSG(!manifest.empty(), "empty manifest");
  ProtocolSplits out;
  out.protocol_id = protocol;

  auto tag = [&](SampleRecord r, Split s) {
    r.split = s;
    return r;
  };

  if (protocol == ProtocolId::P1) {
    std::set<int> subject_set;
    for (const auto& r : manifest) subject_set.insert(r.subject_id);
    std::vector<int> subjects(subject_set.begin(), subject_set.end());
    const size_t n = subjects.size();
    CQIL_CHECK_MSG(n >= 3, "protocol P1 unsatisfiable: needs >= 3 subjects, have " << n);
    size_t n_train = std::max<size_t>(1, std::llround(0.4 * n));
    size_t n_dev = std::max<size_t>(1, std::llround(0.1 * n));
    CQIL_CHECK_MSG(n_train + n_dev < n,
                   "protocol P1 unsatisfiable: no subjects left for test");
    std::set<int> train_ids(subjects.begin(), subjects.begin() + n_train);
    std::set<int> dev_ids(subjects.begin() + n_train, subjects.begin() + n_train + n_dev);
    for (const auto& r : manifest) {
      if (train_ids.count(r.subject_id)) out.train.push_back(tag(r, Split::train));
      else if (dev_ids.count(r.subject_id)) out.dev.push_back(tag(r, Split::dev));
      else out.test.push_back(tag(r, Split::test));
    }
  } else if (protocol == ProtocolId::P3) {
    for (const auto& r : manifest) {
      if (r.quality_score >= 0.4) out.train.push_back(tag(r, Split::train));
      else if (r.quality_score >= 0.3) out.dev.push_back(tag(r, Split::dev));
      else out.test.push_back(tag(r, Split::test));
    }
    CQIL_CHECK_MSG(!out.train.empty(), "protocol P3 unsatisfiable: band [0.4,1] empty");
    CQIL_CHECK_MSG(!out.dev.empty(), "protocol P3 unsatisfiable: band [0.3,0.4) empty");
    CQIL_CHECK_MSG(!out.test.empty(), "protocol P3 unsatisfiable: band [0,0.3) empty");
  } else {
    const AttackCategory held = held_out_mask(protocol);
    size_t live_i = 0;
    std::map<AttackCategory, size_t> mask_i;
    bool saw_held = false;
    for (const auto& r : manifest) {
      if (r.attack_category == AttackCategory::print ||
          r.attack_category == AttackCategory::replay)
        continue;  // protocol 2 uses live and mask categories only
      if (r.attack_category == held) {
        out.test.push_back(tag(r, Split::test));
        saw_held = true;
      } else if (r.liveness == Liveness::live) {
        // 3:1:2 train/dev/test rotation keeps lives in every subset.
        const size_t m = live_i++ % 6;
        if (m < 3) out.train.push_back(tag(r, Split::train));
        else if (m < 4) out.dev.push_back(tag(r, Split::dev));
        else out.test.push_back(tag(r, Split::test));
      } else {
        const size_t m = mask_i[r.attack_category]++ % 4;
        if (m < 3) out.train.push_back(tag(r, Split::train));
        else out.dev.push_back(tag(r, Split::dev));
      }
    }
    CQIL_CHECK_MSG(saw_held, "protocol " << to_string(protocol)
                                         << " unsatisfiable: no "
                                         << to_string(held) << " records");
  }

  out.validate();
  return out;
}

}  // namespace cqil
