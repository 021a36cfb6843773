#include "derefl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "derefl/metrics.hpp"

namespace derefl {

using nn::Tensor;
using nn::Var;

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Var& p : params_) {
    m_.push_back(Tensor::zeros(p->value.shape()));
    v_.push_back(Tensor::zeros(p->value.shape()));
  }
}

void Adam::zero_grad() { nn::zero_grad(params_); }

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    if (!p->grad.defined()) continue;  // parameter untouched by this graph
    double* w = p->value.data();
    const double* g = p->grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const std::int64_t n = p->value.size();
    for (std::int64_t j = 0; j < n; ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::save(BinaryWriter& w) const {
  w.i64(t_);
  w.f64(lr_);
  w.f64(beta1_);
  w.f64(beta2_);
  w.f64(eps_);
  w.u64(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    w.f64_array(m_[i].data(), static_cast<std::size_t>(m_[i].size()));
    w.f64_array(v_[i].data(), static_cast<std::size_t>(v_[i].size()));
  }
}

void Adam::load(BinaryReader& r) {
  t_ = r.i64();
  lr_ = r.f64();
  beta1_ = r.f64();
  beta2_ = r.f64();
  eps_ = r.f64();
  const std::uint64_t n = r.u64();
  require(n == params_.size(), Errc::corrupt_data, "optimizer state parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    r.f64_array(m_[i].data(), static_cast<std::size_t>(m_[i].size()));
    r.f64_array(v_[i].data(), static_cast<std::size_t>(v_[i].size()));
  }
}

// ---------------------------------------------------------------------------
// schedule & policy

double cosine_lr(int epoch, int total_epochs, double lr0) {
  require(total_epochs >= 1, Errc::invalid_epoch, "total_epochs must be >= 1");
  require(epoch >= 0 && epoch <= total_epochs, Errc::invalid_epoch,
          "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(total_epochs) + "]");
  require(lr0 > 0.0, Errc::bad_config, "lr0 must be positive");
  return lr0 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) / total_epochs)) / 2.0;
}

bool should_upgrade_steps(const TrainState& state, const UpgradePolicy& policy) {
  if (policy.mode == UpgradePolicy::Mode::fixed_epoch) return state.epoch >= policy.epoch;

  require(!state.val_history.empty(), Errc::invalid_epoch,
          "plateau policy needs at least one validation record");
  const std::size_t n = state.val_history.size();
  if (n < static_cast<std::size_t>(policy.patience) + 1) return false;

  double best_before = -1e300, best_overall = -1e300;
  for (std::size_t i = 0; i < n; ++i) {
    best_overall = std::max(best_overall, state.val_history[i].psnr);
    if (i + static_cast<std::size_t>(policy.patience) < n)
      best_before = std::max(best_before, state.val_history[i].psnr);
  }
  return best_overall - best_before < policy.min_delta_db;
}

// ---------------------------------------------------------------------------
// config

void TrainConfig::validate() const {
  require(epochs >= 1, Errc::bad_config, "epochs must be >= 1");
  require(lr0 > 0.0, Errc::bad_config, "lr0 must be positive");
  require(batch_size >= 1, Errc::bad_config, "batch_size must be >= 1");
  require(initial_m >= 1 && initial_m <= upgraded_m, Errc::bad_config,
          "need 1 <= initial_m <= upgraded_m");
  require(k >= 2, Errc::invalid_k, "k must be >= 2");
  require(image_size == 0 || image_size >= 8, Errc::bad_config, "image_size must be 0 or >= 8");
  require(!augment_enabled || augment_crop > 0, Errc::bad_config,
          "augmentation enabled but augment_crop not set");
}

// ---------------------------------------------------------------------------
// helpers

nn::Tensor aux_plane(const ImageRGB& ambient, AuxFeature mode, const DepthBackend& backend,
                     int k) {
  switch (mode) {
    case AuxFeature::none:
      return Tensor::zeros({1, ambient.height, ambient.width});
    case AuxFeature::depth: {
      GrayMap depth = estimate_depth(ambient, backend);
      auto [lo, hi] = std::minmax_element(depth.data.begin(), depth.data.end());
      Tensor t({1, depth.height, depth.width});
      const double span = *hi > *lo ? *hi - *lo : 1.0;
      for (std::size_t i = 0; i < depth.data.size(); ++i)
        t[static_cast<std::int64_t>(i)] = (depth.data[i] - *lo) / span;
      return t;
    }
    case AuxFeature::rdm:
      return gray_to_tensor(quantize_depth(estimate_depth(ambient, backend), k).encoding());
  }
  raise(Errc::bad_config, "unknown aux feature mode");
}

namespace {

bool provenance_allowed(const std::string& filter, Provenance p) {
  if (filter.empty()) return true;
  std::stringstream ss(filter);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (tok == provenance_name(p)) return true;
  return false;
}

DatasetManifest filter_by_provenance(const DatasetManifest& manifest, const std::string& filter) {
  if (filter.empty()) return manifest;
  DatasetManifest out;
  out.root = manifest.root;
  out.split = manifest.split;
  for (const auto& e : manifest.entries)
    if (provenance_allowed(filter, e.provenance)) out.entries.push_back(e);
  require(!out.entries.empty(), Errc::empty_dataset,
          "provenance filter \"" + filter + "\" removed every entry");
  return out;
}

TrainSample resize_sample(TrainSample s, int size) {
  if (size <= 0) return s;
  if (s.ambient.height == size && s.ambient.width == size) return s;
  s.ambient = resize_bilinear(s.ambient, size, size);
  s.transmission = resize_bilinear(s.transmission, size, size);
  if (s.reflection) s.reflection = resize_bilinear(*s.reflection, size, size);
  return s;
}

struct TrainerBlob {
  TrainState state;
  Adam* opt = nullptr;
  Rng* rng = nullptr;
};

void save_trainer_section(BinaryWriter& w, const TrainState& state, const Adam& opt,
                          const Rng& rng) {
  w.u32(static_cast<std::uint32_t>(state.epoch));
  w.i64(state.global_iter);
  w.u32(static_cast<std::uint32_t>(state.current_m));
  w.f64(state.lr);
  w.f64(state.best_val_psnr);
  w.u64(state.val_history.size());
  for (const auto& v : state.val_history) {
    w.u32(static_cast<std::uint32_t>(v.epoch));
    w.f64(v.psnr);
    w.f64(v.ssim);
  }
  w.str(rng.serialize());
  opt.save(w);
}

void load_trainer_section(BinaryReader& r, TrainState& state, Adam& opt, Rng& rng) {
  state.epoch = static_cast<int>(r.u32());
  state.global_iter = r.i64();
  state.current_m = static_cast<int>(r.u32());
  state.lr = r.f64();
  state.best_val_psnr = r.f64();
  state.val_history.resize(r.u64());
  for (auto& v : state.val_history) {
    v.epoch = static_cast<int>(r.u32());
    v.psnr = r.f64();
    v.ssim = r.f64();
  }
  state.rng_state = r.str();
  rng.deserialize(state.rng_state);
  opt.load(r);
}

}  // namespace

std::pair<double, double> validate(const ModelBundle& bundle, const DatasetManifest& manifest,
                                   const DepthBackend& backend, const EvalOptions& opt) {
  validate_manifest(manifest);
  SampleStream stream(manifest, 0, /*shuffle=*/false);
  double sum_psnr = 0.0, sum_ssim = 0.0;
  std::size_t n = 0;
  while (stream.has_next()) {
    TrainSample sample = resize_sample(stream.next(), opt.image_size);
    Tensor aux = aux_plane(sample.ambient, opt.aux_feature, backend, bundle.k);
    nn::NoGradGuard ng;
    auto [r_hat, t_hat] = model_forward_vars(bundle, nn::constant(image_to_tensor(sample.ambient)),
                                             nn::constant(aux));
    ImageRGB estimate = tensor_to_image(t_hat->value);
    sum_psnr += psnr(estimate, sample.transmission);
    sum_ssim += ssim(estimate, sample.transmission);
    ++n;
  }
  require(n > 0, Errc::empty_dataset, "validation manifest is empty");
  return {sum_psnr / static_cast<double>(n), sum_ssim / static_cast<double>(n)};
}

TrainState train(ModelBundle& bundle, const DatasetManifest& train_manifest,
                 const DatasetManifest& val_manifest, const TrainConfig& cfg,
                 const DepthBackend& backend, std::ostream& log,
                 const std::filesystem::path& checkpoint_dir,
                 const std::optional<std::filesystem::path>& resume_from) {
  cfg.validate();
  DatasetManifest train_m = filter_by_provenance(train_manifest, cfg.provenance_filter);
  validate_manifest(train_m);
  validate_manifest(val_manifest);
  std::filesystem::create_directories(checkpoint_dir);

  FeatureExtractor extractor = FeatureExtractor::from_spec(cfg.feature_extractor);
  Adam opt(bundle.all_params(), cfg.lr0);
  Rng rng(mix_seed(cfg.seed, 0x7124u));

  TrainState state;
  state.current_m = cfg.initial_m;
  int start_epoch = 0;

  if (resume_from) {
    // restore weights first so the optimizer can be rebuilt over the new
    // parameter leaves, then re-read the trainer section into it
    bundle = load_checkpoint(*resume_from);
    opt = Adam(bundle.all_params(), cfg.lr0);
    load_checkpoint(*resume_from,
                    [&](BinaryReader& r) { load_trainer_section(r, state, opt, rng); });
    start_epoch = state.epoch + 1;
  }

  // Aux planes are deterministic per sample; cache only when geometry is
  // fixed (no augmentation).
  std::unordered_map<std::string, Tensor> aux_cache;
  const bool cache_aux = !cfg.augment_enabled;

  const EvalOptions val_opts{cfg.image_size, cfg.aux_feature};

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    state.epoch = epoch;
    state.lr = cosine_lr(epoch, cfg.epochs, cfg.lr0);
    opt.set_lr(state.lr);

    if (state.current_m < cfg.upgraded_m) {
      const bool can_check = cfg.upgrade.mode == UpgradePolicy::Mode::fixed_epoch ||
                             !state.val_history.empty();
      if (can_check && should_upgrade_steps(state, cfg.upgrade))
        state.current_m = cfg.upgraded_m;  // monotone: never downgrades
    }

    SampleStream stream(train_m, mix_seed(cfg.seed, 0xE0u, static_cast<std::uint64_t>(epoch)),
                        /*shuffle=*/true);
    int batch_fill = 0;
    opt.zero_grad();
    std::size_t idx = 0;
    while (stream.has_next()) {
      TrainSample sample;
      try {
        sample = stream.next();
      } catch (const Error& e) {
        raise(Errc::data_error, e.what());
      }
      sample = resize_sample(std::move(sample), cfg.image_size);
      if (cfg.augment_enabled)
        sample = augment(sample,
                         mix_seed(cfg.seed, 0xA9u, static_cast<std::uint64_t>(epoch), idx),
                         cfg.augment_crop, cfg.hflip_prob);

      Tensor aux;
      if (cache_aux) {
        auto it = aux_cache.find(sample.id);
        if (it == aux_cache.end())
          it = aux_cache.emplace(sample.id,
                                 aux_plane(sample.ambient, cfg.aux_feature, backend, cfg.k))
                   .first;
        aux = it->second;
      } else {
        aux = aux_plane(sample.ambient, cfg.aux_feature, backend, cfg.k);
      }

      MultiStepOptions loss_opt;
      loss_opt.steps = state.current_m;
      loss_opt.weights = cfg.loss_weights;
      loss_opt.reflection_loss_steps = cfg.reflection_loss_steps;

      std::optional<Tensor> refl;
      if (sample.reflection) refl = image_to_tensor(*sample.reflection);
      StepModelFn model = step_model(bundle, aux);

      MultiStepResult result;
      try {
        result = cfg.loss_variant == LossVariant::multi_step
                     ? multi_step_loss(model, image_to_tensor(sample.ambient),
                                       image_to_tensor(sample.transmission), refl, extractor,
                                       loss_opt)
                     : repeated_single_step_loss(model, image_to_tensor(sample.ambient),
                                                 image_to_tensor(sample.transmission), refl,
                                                 extractor, loss_opt);
      } catch (const Error& e) {
        if (e.code() == Errc::non_finite_loss)
          raise(Errc::non_finite_loss, "iter " + std::to_string(state.global_iter) + " sample \"" +
                                           sample.id + "\": " + e.what());
        throw;
      }

      nn::backward(result.total);
      if (++batch_fill == cfg.batch_size || !stream.has_next()) {
        if (batch_fill > 1)
          for (const Var& p : bundle.all_params())
            if (p->grad.defined())
              for (std::int64_t i = 0; i < p->grad.size(); ++i)
                p->grad[i] /= static_cast<double>(batch_fill);
        opt.step();
        opt.zero_grad();
        batch_fill = 0;
      }

      log << loss_jsonl(state.global_iter, epoch, result.breakdown, state.lr) << "\n";
      ++state.global_iter;
      ++idx;
    }

    auto [val_psnr, val_ssim] = validate(bundle, val_manifest, backend, val_opts);
    state.val_history.push_back({epoch, val_psnr, val_ssim});
    log << nlohmann::json({{"epoch", epoch},
                           {"val_psnr", val_psnr},
                           {"val_ssim", val_ssim},
                           {"lr", state.lr},
                           {"M", state.current_m}})
               .dump()
        << "\n";
    log.flush();

    state.rng_state = rng.serialize();
    bundle.epoch = epoch;
    bundle.current_m = state.current_m;
    auto section = [&](BinaryWriter& w) { save_trainer_section(w, state, opt, rng); };
    if (val_psnr > state.best_val_psnr) {
      state.best_val_psnr = val_psnr;
      save_checkpoint(bundle, checkpoint_dir / "best.ckpt", section);
    }
    save_checkpoint(bundle, checkpoint_dir / "last.ckpt", section);
  }
  return state;
}

}  // namespace derefl
