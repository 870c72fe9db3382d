#include "rmit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "rmit/error.hpp"

namespace rmit {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw InvalidSpec(where + " must be an object");
  std::set<std::string> names(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!names.count(key)) throw InvalidSpec("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& target) {
  if (!j.contains(key)) return;
  try {
    target = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidSpec(std::string("bad value for '") + key + "': " + e.what());
  }
}

json weights_json(const LossWeights& w) {
  return {{"lambda_cls", w.lambda_cls},     {"lambda_cyc", w.lambda_cyc},
          {"alpha", w.alpha},               {"lambda_id", w.lambda_id},
          {"gan_objective", std::string(to_string(w.gan_objective))},
          {"gp_weight", w.gp_weight},       {"use_adv2", w.use_adv2}};
}

void read_weights(const json& j, LossWeights& w) {
  reject_unknown(j, {"lambda_cls", "lambda_cyc", "alpha", "lambda_id", "gan_objective", "gp_weight", "use_adv2"},
                 "weights");
  read(j, "lambda_cls", w.lambda_cls);
  read(j, "lambda_cyc", w.lambda_cyc);
  read(j, "alpha", w.alpha);
  read(j, "lambda_id", w.lambda_id);
  read(j, "gp_weight", w.gp_weight);
  read(j, "use_adv2", w.use_adv2);
  if (j.contains("gan_objective")) w.gan_objective = parse_gan_objective(j.at("gan_objective").get<std::string>());
}

json generator_json(const GeneratorConfig& g) {
  return {{"image_size", g.image_size},         {"image_channels", g.image_channels},
          {"base_width", g.base_width},         {"num_res_blocks", g.num_res_blocks},
          {"attention_variant", g.attention_variant}, {"stem_kernel", g.stem_kernel},
          {"head_kernel", g.head_kernel}};
}

void read_generator(const json& j, GeneratorConfig& g) {
  reject_unknown(j, {"image_size", "image_channels", "base_width", "num_res_blocks", "attention_variant",
                     "stem_kernel", "head_kernel"},
                 "generator");
  read(j, "image_size", g.image_size);
  read(j, "image_channels", g.image_channels);
  read(j, "base_width", g.base_width);
  read(j, "num_res_blocks", g.num_res_blocks);
  read(j, "attention_variant", g.attention_variant);
  read(j, "stem_kernel", g.stem_kernel);
  read(j, "head_kernel", g.head_kernel);
}

json discriminator_json(const DiscriminatorConfig& d) {
  return {{"kind", d.kind == DiscriminatorKind::patch ? "patch" : "resnet"},
          {"image_size", d.image_size},
          {"image_channels", d.image_channels},
          {"base_width", d.base_width},
          {"num_down", d.num_down},
          {"dropout", d.dropout}};
}

void read_discriminator(const json& j, DiscriminatorConfig& d) {
  reject_unknown(j, {"kind", "image_size", "image_channels", "base_width", "num_down", "dropout"}, "discriminator");
  if (j.contains("kind")) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "patch") {
      d.kind = DiscriminatorKind::patch;
    } else if (kind == "resnet") {
      d.kind = DiscriminatorKind::resnet;
    } else {
      throw InvalidSpec("unknown discriminator kind '" + kind + "'");
    }
  }
  read(j, "image_size", d.image_size);
  read(j, "image_channels", d.image_channels);
  read(j, "base_width", d.base_width);
  read(j, "num_down", d.num_down);
  read(j, "dropout", d.dropout);
}

class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<torch::nn::Module*> modules) : modules_(std::move(modules)) { set(false); }
  ~FreezeGuard() { set(true); }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  void set(bool on) {
    for (auto* m : modules_) {
      if (!m) continue;
      for (auto& p : m->parameters()) p.set_requires_grad(on);
    }
  }
  std::vector<torch::nn::Module*> modules_;
};

// Reuses an already computed realness map when the critic is asked about the
// same tensor again.
Critic cached_critic(Discriminator& d, const torch::Tensor& seen, const torch::Tensor& realness) {
  return [&d, seen, realness](const torch::Tensor& t) {
    if (t.is_same(seen)) return realness;
    return discriminate(d, t).realness;
  };
}

torch::Tensor zero() { return torch::zeros({}, torch::kFloat); }

void check_finite(const LossBundle& bundle, std::int64_t step) {
  if (!bundle.all_finite()) {
    throw NumericalError("non-finite loss at step " + std::to_string(step) + ": " + bundle.describe());
  }
}

}  // namespace

// TrainConfig ---------------------------------------------------------------

void TrainConfig::validate() const {
  weights.validate();
  noise.validate();
  if (noise.kind == NoiseKind::per_attribute_flip) {
    throw InvalidSpec("per-attribute flips have no transition matrix; single-label training needs one");
  }
  generator.validate();
  discriminator.validate();
  const auto c = generator.num_domains;
  if (discriminator.num_domains != c || noise.num_domains != c) throw InvalidSpec("inconsistent domain counts");
  if (discriminator.image_size != generator.image_size || discriminator.image_channels != generator.image_channels) {
    throw InvalidSpec("generator and discriminator disagree on the image shape");
  }
  if (robust_cls.method == RobustMethod::forward) {
    auto cls = robust_cls;
    cls.transition = forward_transition();
    cls.validate(c);
  } else {
    robust_cls.validate(c);
  }
  if (epochs_flat < 0 || epochs_decay < 0 || total_epochs() < 1) throw InvalidSpec("schedule needs at least 1 epoch");
  if (!(lr > 0.0)) throw InvalidSpec("lr must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw InvalidSpec("Adam betas must lie in [0, 1)");
  }
  if (d_steps_per_g < 1) throw InvalidSpec("d_steps_per_g must be at least 1");
  if (batch_size < 1) throw InvalidSpec("batch_size must be positive");
  if (!(hflip_probability >= 0.0 && hflip_probability <= 1.0)) throw InvalidSpec("hflip probability outside [0, 1]");
  if (eval_every_epochs < 1 || classifier_eval_every_iterations < 1 || checkpoint_every_epochs < 1) {
    throw InvalidSpec("cadences must be positive");
  }
  if (evaluation.kid_splits < 1 || evaluation.kid_split_size < 2) throw InvalidSpec("invalid KID settings");
  if (eval_classifier.iterations < 1 || eval_classifier.batch_size < 1 || !(eval_classifier.lr > 0.0)) {
    throw InvalidSpec("invalid evaluation classifier training settings");
  }
}

TransitionMatrix TrainConfig::forward_transition() const {
  if (robust_cls.transition) return *robust_cls.transition;
  return build_transition(noise);
}

json TrainConfig::to_json() const {
  json classifier = {{"method", std::string(to_string(robust_cls.method))}, {"drop_rate", robust_cls.drop_rate}};
  if (robust_cls.transition) classifier["transition"] = robust_cls.transition->rows();
  return {
      {"variant", std::string(to_string(variant))},
      {"num_domains", generator.num_domains},
      {"weights", weights_json(weights)},
      {"classifier", classifier},
      {"noise", {{"kind", std::string(to_string(noise.kind))}, {"rate", noise.rate}}},
      {"schedule",
       {{"epochs_flat", epochs_flat},
        {"epochs_decay", epochs_decay},
        {"lr", lr},
        {"adam_beta1", adam_beta1},
        {"adam_beta2", adam_beta2},
        {"d_steps_per_g", d_steps_per_g},
        {"batch_size", batch_size}}},
      {"seed", seed},
      {"generator", generator_json(generator)},
      {"discriminator", discriminator_json(discriminator)},
      {"relabel_mode", std::string(to_string(relabel_mode))},
      {"hflip_probability", hflip_probability},
      {"cadence",
       {{"eval_every_epochs", eval_every_epochs},
        {"classifier_eval_every_iterations", classifier_eval_every_iterations},
        {"checkpoint_every_epochs", checkpoint_every_epochs}}},
      {"evaluation", {{"kid_splits", evaluation.kid_splits}, {"kid_split_size", evaluation.kid_split_size}}},
      {"eval_classifier",
       {{"iterations", eval_classifier.iterations},
        {"batch_size", eval_classifier.batch_size},
        {"lr", eval_classifier.lr}}},
  };
}

TrainConfig TrainConfig::from_json(const json& j) {
  reject_unknown(j,
                 {"variant", "num_domains", "weights", "classifier", "noise", "schedule", "seed", "generator",
                  "discriminator", "relabel_mode", "hflip_probability", "cadence", "evaluation", "eval_classifier"},
                 "config");
  std::int64_t c = 3;
  read(j, "num_domains", c);
  if (c < 2) throw InvalidSpec("num_domains must be at least 2");
  const auto variant = parse_variant(j.value("variant", std::string("RMIT")));
  TrainConfig cfg = desk(variant, c);

  if (j.contains("weights")) read_weights(j.at("weights"), cfg.weights);
  if (j.contains("classifier")) {
    const auto& k = j.at("classifier");
    reject_unknown(k, {"method", "drop_rate", "transition"}, "classifier");
    if (k.contains("method")) cfg.robust_cls.method = parse_robust_method(k.at("method").get<std::string>());
    read(k, "drop_rate", cfg.robust_cls.drop_rate);
    if (k.contains("transition")) {
      cfg.robust_cls.transition = TransitionMatrix(k.at("transition").get<std::vector<std::vector<double>>>());
    }
  }
  if (j.contains("noise")) {
    const auto& n = j.at("noise");
    reject_unknown(n, {"kind", "rate"}, "noise");
    if (n.contains("kind")) cfg.noise.kind = parse_noise_kind(n.at("kind").get<std::string>());
    read(n, "rate", cfg.noise.rate);
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    reject_unknown(s, {"epochs_flat", "epochs_decay", "lr", "adam_beta1", "adam_beta2", "d_steps_per_g", "batch_size"},
                   "schedule");
    read(s, "epochs_flat", cfg.epochs_flat);
    read(s, "epochs_decay", cfg.epochs_decay);
    read(s, "lr", cfg.lr);
    read(s, "adam_beta1", cfg.adam_beta1);
    read(s, "adam_beta2", cfg.adam_beta2);
    read(s, "d_steps_per_g", cfg.d_steps_per_g);
    read(s, "batch_size", cfg.batch_size);
  }
  read(j, "seed", cfg.seed);
  if (j.contains("generator")) read_generator(j.at("generator"), cfg.generator);
  if (j.contains("discriminator")) read_discriminator(j.at("discriminator"), cfg.discriminator);
  if (j.contains("relabel_mode")) cfg.relabel_mode = parse_relabel_mode(j.at("relabel_mode").get<std::string>());
  read(j, "hflip_probability", cfg.hflip_probability);
  if (j.contains("cadence")) {
    const auto& k = j.at("cadence");
    reject_unknown(k, {"eval_every_epochs", "classifier_eval_every_iterations", "checkpoint_every_epochs"}, "cadence");
    read(k, "eval_every_epochs", cfg.eval_every_epochs);
    read(k, "classifier_eval_every_iterations", cfg.classifier_eval_every_iterations);
    read(k, "checkpoint_every_epochs", cfg.checkpoint_every_epochs);
  }
  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    reject_unknown(e, {"kid_splits", "kid_split_size"}, "evaluation");
    read(e, "kid_splits", cfg.evaluation.kid_splits);
    read(e, "kid_split_size", cfg.evaluation.kid_split_size);
  }
  if (j.contains("eval_classifier")) {
    const auto& e = j.at("eval_classifier");
    reject_unknown(e, {"iterations", "batch_size", "lr"}, "eval_classifier");
    read(e, "iterations", cfg.eval_classifier.iterations);
    read(e, "batch_size", cfg.eval_classifier.batch_size);
    read(e, "lr", cfg.eval_classifier.lr);
  }
  cfg.validate();
  return cfg;
}

std::string TrainConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(to_json().dump())));
  return buf;
}

TrainConfig TrainConfig::desk(Variant variant, std::int64_t num_domains) {
  TrainConfig cfg;
  cfg.variant = variant;
  cfg.generator = GeneratorConfig::desk(num_domains);
  cfg.discriminator = DiscriminatorConfig::desk(num_domains);
  cfg.noise.num_domains = static_cast<int>(num_domains);
  cfg.weights.use_adv2 = variant == Variant::rmit_adv2;
  return cfg;
}

double lr_at(int epoch, const TrainConfig& config) {
  const int total = config.total_epochs();
  if (epoch < 0 || epoch >= total) throw InvalidInput("epoch outside the schedule");
  if (epoch < config.epochs_flat) return config.lr;
  return config.lr * static_cast<double>(total - epoch) / static_cast<double>(config.epochs_decay);
}

// TrainState ----------------------------------------------------------------

TrainState TrainState::create(const TrainConfig& config) {
  config.validate();
  torch::manual_seed(config.seed);
  TrainState s;
  s.config = config;
  const bool coteach = config.robust_cls.method == RobustMethod::coteaching;
  const auto opts = torch::optim::AdamOptions(config.lr).betas({config.adam_beta1, config.adam_beta2});

  s.generator = Generator(config.generator);
  auto dcfg = config.discriminator;
  dcfg.with_realness = true;
  dcfg.with_classifier = !coteach;
  s.discriminator = Discriminator(dcfg);
  s.optimizer_g = std::make_unique<torch::optim::Adam>(s.generator->parameters(), opts);
  s.optimizer_d = std::make_unique<torch::optim::Adam>(s.discriminator->parameters(), opts);
  if (uses_second_discriminator(config.weights, config.variant)) {
    auto d2 = config.discriminator;
    d2.with_realness = true;
    d2.with_classifier = false;
    s.second_discriminator = Discriminator(d2);
    s.optimizer_d2 = std::make_unique<torch::optim::Adam>(s.second_discriminator->parameters(), opts);
  }
  if (coteach) {
    auto peers = config.discriminator;
    peers.with_realness = false;
    s.coteaching = CoteachingState::create(peers, config.lr, config.adam_beta1, config.adam_beta2);
  }
  return s;
}

void TrainState::set_lr(double lr) {
  for (auto* opt : {optimizer_g.get(), optimizer_d.get(), optimizer_d2.get(), coteaching.optimizer_a.get(),
                    coteaching.optimizer_b.get()}) {
    if (!opt) continue;
    for (auto& group : opt->param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
}

Translator TrainState::translator() {
  return [this](const torch::Tensor& x, const torch::Tensor& y) { return generate(generator, x, y); };
}

Classifier TrainState::classifier() {
  if (coteaching.initialized()) {
    return [this](const torch::Tensor& x) { return discriminate(coteaching.peer_a, x).class_logits; };
  }
  return [this](const torch::Tensor& x) { return discriminate(discriminator, x).class_logits; };
}

// train_step ----------------------------------------------------------------

StepResult train_step(TrainState& state, const Batch<TrainingAccess>& batch) {
  if (!state.initialized()) throw LifecycleError("training state has not been created");
  const auto& cfg = state.config;
  const auto& w = cfg.weights;
  const auto& x = batch.images;
  const auto& y = batch.labels;
  if (x.dim() != 4 || x.size(0) == 0) throw InvalidInput("training batch must be a nonempty [B, C, H, W] tensor");
  if (y.dim() != 1 || y.size(0) != x.size(0)) throw InvalidInput("one label per image expected");
  const auto batch_size = x.size(0);
  const auto c = cfg.generator.num_domains;
  const bool coteach = cfg.robust_cls.method == RobustMethod::coteaching;
  const bool second = !state.second_discriminator.is_empty();
  auto G = state.translator();

  StepResult result;
  auto& bundle = result.losses;
  const auto step = state.d_steps + 1;

  // D/C (and D') update.
  auto y_prime = torch::randint(0, c, {batch_size}, torch::kLong);
  torch::Tensor fake, fake_twice, y_dprime;
  {
    torch::NoGradGuard no_grad;
    fake = G(x, y_prime);
  }
  auto real_out = discriminate(state.discriminator, x);
  ObjectiveTerms<torch::Tensor> d_terms;
  for (auto* t : {&d_terms.adv_g, &d_terms.cls_f, &d_terms.cyc, &d_terms.vcyc, &d_terms.recyc, &d_terms.adv2_d,
                  &d_terms.adv2_g, &d_terms.id}) {
    *t = zero();
  }
  torch::Tensor penalty;
  d_terms.adv_d = adv_d_term(cached_critic(state.discriminator, x, real_out.realness), x, fake, w.gan_objective,
                             w.gp_weight, &penalty);

  std::optional<CoteachLosses> peer_losses;
  switch (cfg.robust_cls.method) {
    case RobustMethod::naive:
      d_terms.cls_r = cross_entropy_checked(real_out.class_logits, y);
      break;
    case RobustMethod::forward: {
      auto fwd = forward_corrected_loss_checked(real_out.class_logits, y, cfg.forward_transition());
      d_terms.cls_r = fwd.loss;
      break;
    }
    case RobustMethod::coteaching: {
      auto logits_a = discriminate(state.coteaching.peer_a, x).class_logits;
      auto logits_b = discriminate(state.coteaching.peer_b, x).class_logits;
      if (!torch::isfinite(logits_a).all().item<bool>() || !torch::isfinite(logits_b).all().item<bool>()) {
        throw NumericalError("non-finite co-teaching logits at step " + std::to_string(step));
      }
      peer_losses = coteach_losses(logits_a, logits_b, y, cfg.robust_cls.drop_rate);
      d_terms.cls_r = zero();
      bundle.set("cls_r", peer_losses->loss_a);
      bundle.set("cls_r_peer_b", peer_losses->loss_b);
      bundle.set("coteach_selected", peer_losses->selected_fraction);
      break;
    }
  }
  auto d_obj = full_objectives(w, d_terms, cfg.variant);
  bundle.set("adv_d", d_terms.adv_d);
  if (penalty.defined()) bundle.set("gp", penalty);
  if (!coteach) bundle.set("cls_r", d_terms.cls_r);
  bundle.set("total_d", d_obj.total_d);

  torch::Tensor total_d2;
  if (second) {
    y_dprime = torch::randint(0, c, {batch_size}, torch::kLong);
    {
      torch::NoGradGuard no_grad;
      fake_twice = G(fake, y_dprime);
    }
    Critic critic2 = [&](const torch::Tensor& t) { return discriminate(state.second_discriminator, t).realness; };
    d_terms.adv2_d = adv_d_term(critic2, x, fake_twice, w.gan_objective, w.gp_weight);
    total_d2 = *full_objectives(w, d_terms, cfg.variant).total_d2;
    bundle.set("adv2_d", d_terms.adv2_d);
    bundle.set("total_d2", total_d2);
  }
  check_finite(bundle, step);

  state.optimizer_d->zero_grad();
  d_obj.total_d.backward();
  state.optimizer_d->step();
  if (second) {
    state.optimizer_d2->zero_grad();
    total_d2.backward();
    state.optimizer_d2->step();
  }
  if (peer_losses) {
    state.coteaching.optimizer_a->zero_grad();
    state.coteaching.optimizer_b->zero_grad();
    (peer_losses->loss_a + peer_losses->loss_b).backward();
    state.coteaching.optimizer_a->step();
    state.coteaching.optimizer_b->step();
  }
  state.d_steps = step;

  if (state.d_steps % cfg.d_steps_per_g != 0) return result;

  // G update with every critic and classifier frozen.
  FreezeGuard freeze({state.discriminator.get(), second ? state.second_discriminator.get() : nullptr,
                      coteach ? state.coteaching.peer_a.get() : nullptr,
                      coteach ? state.coteaching.peer_b.get() : nullptr});
  const auto usage = required_terms(w, cfg.variant);
  ObjectiveTerms<torch::Tensor> g_terms;
  for (auto* t : {&g_terms.adv_d, &g_terms.cls_r, &g_terms.cyc, &g_terms.vcyc, &g_terms.recyc, &g_terms.adv2_d,
                  &g_terms.adv2_g, &g_terms.id}) {
    *t = zero();
  }
  auto translated = G(x, y_prime);
  auto fake_out = discriminate(state.discriminator, translated);
  g_terms.adv_g =
      adv_g_term(cached_critic(state.discriminator, translated, fake_out.realness), translated, w.gan_objective);
  auto fake_logits = coteach ? discriminate(state.coteaching.peer_a, translated).class_logits : fake_out.class_logits;
  g_terms.cls_f = cross_entropy_checked(fake_logits, y_prime);

  torch::Tensor twice;
  if (usage.vcyc || usage.adv2) {
    if (!y_dprime.defined()) y_dprime = torch::randint(0, c, {batch_size}, torch::kLong);
    twice = G(translated, y_dprime);
  }
  if (usage.cyc) g_terms.cyc = reconstruction_l1(G, x, translated, y);
  if (usage.vcyc) g_terms.vcyc = reconstruction_l1(G, translated, twice, y_prime);
  if (usage.recyc) {
    auto y_relabel = relabel(state.classifier(), x, cfg.relabel_mode);
    g_terms.recyc = reconstruction_l1(G, x, translated, y_relabel);
  }
  if (usage.adv2) {
    Critic critic2 = [&](const torch::Tensor& t) { return discriminate(state.second_discriminator, t).realness; };
    g_terms.adv2_g = adv_g_term(critic2, twice, w.gan_objective);
  }
  if (usage.id) g_terms.id = identity_loss(G, x, y);
  auto g_obj = full_objectives(w, g_terms, cfg.variant);

  bundle.set("adv_g", g_terms.adv_g);
  bundle.set("cls_f", g_terms.cls_f);
  if (usage.cyc) bundle.set("cyc", g_terms.cyc);
  if (usage.vcyc) bundle.set("vcyc", g_terms.vcyc);
  if (usage.recyc) bundle.set("recyc", g_terms.recyc);
  if (cfg.variant == Variant::rmit_cyc_vcyc) bundle.set("mixed", mix(w.alpha, g_terms.cyc, g_terms.vcyc));
  if (cfg.variant == Variant::rmit_recyc_vcyc) bundle.set("mixed", mix(w.alpha, g_terms.recyc, g_terms.vcyc));
  if (usage.adv2) bundle.set("adv2_g", g_terms.adv2_g);
  if (usage.id) bundle.set("id", g_terms.id);
  bundle.set("total_g", g_obj.total_g);
  check_finite(bundle, step);

  state.optimizer_g->zero_grad();
  g_obj.total_g.backward();
  state.optimizer_g->step();
  ++state.g_steps;
  result.generator_updated = true;
  return result;
}

double classifier_accuracy(TrainState& state, const torch::Tensor& images, std::span<const std::int64_t> labels) {
  if (!state.initialized()) throw LifecycleError("training state has not been created");
  if (images.size(0) != static_cast<std::int64_t>(labels.size()) || labels.empty()) {
    throw InvalidInput("one label per image expected");
  }
  auto& net = state.coteaching.initialized() ? state.coteaching.peer_a : state.discriminator;
  torch::NoGradGuard no_grad;
  net->eval();
  auto predicted = discriminate(net, images).class_logits.argmax(1);
  net->train();
  auto truth = torch::tensor(std::vector<std::int64_t>(labels.begin(), labels.end()), torch::kLong);
  return 100.0 * predicted.eq(truth).sum().item<double>() / static_cast<double>(labels.size());
}

EvalClassifier train_eval_classifier(const LabeledDataset& train, const EvalClassifierTraining& settings,
                                     std::uint64_t seed) {
  if (train.size() == 0) throw InvalidInput("evaluation classifier needs training images");
  torch::manual_seed(seed);
  EvalClassifierConfig cfg;
  cfg.image_size = train.image_size();
  cfg.image_channels = train.image_channels();
  cfg.num_domains = train.num_domains();
  EvalClassifier net(cfg);
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(settings.lr));
  auto labels = torch::tensor(train.clean_labels(), torch::kLong);
  for (std::int64_t it = 0; it < settings.iterations; ++it) {
    auto idx = torch::randint(0, train.size(), {settings.batch_size}, torch::kLong);
    auto loss = torch::nn::functional::cross_entropy(net->forward(train.images().index_select(0, idx)),
                                                     labels.index_select(0, idx));
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  net->eval();
  net->mark_trained();
  return net;
}

// ScoreTrajectory -----------------------------------------------------------

void ScoreTrajectory::add(std::int64_t step, int epoch, std::string metric, double value) {
  for (auto it = points_.rbegin(); it != points_.rend(); ++it) {
    if (it->metric == metric) {
      if (step <= it->step) throw InvalidInput("trajectory steps must increase within a series");
      break;
    }
  }
  points_.push_back({step, epoch, std::move(metric), value});
}

std::vector<TrajectoryPoint> ScoreTrajectory::series(std::string_view metric) const {
  std::vector<TrajectoryPoint> out;
  for (const auto& p : points_) {
    if (p.metric == metric) out.push_back(p);
  }
  return out;
}

json ScoreTrajectory::to_json() const {
  json rows = json::array();
  for (const auto& p : points_) {
    rows.push_back({{"step", p.step}, {"epoch", p.epoch}, {"metric", p.metric}, {"value", p.value}});
  }
  return rows;
}

ScoreTrajectory ScoreTrajectory::from_json(const json& j) {
  ScoreTrajectory t;
  for (const auto& row : j) {
    t.add(row.at("step").get<std::int64_t>(), row.at("epoch").get<int>(), row.at("metric").get<std::string>(),
          row.at("value").get<double>());
  }
  return t;
}

// Checkpoints ---------------------------------------------------------------

namespace {

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

torch::Tensor torch_rng_state() {
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  return gen.get_state();
}

void set_torch_rng_state(const torch::Tensor& state) {
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  gen.set_state(state);
}

void add_state(CheckpointArchive& a, TrainState& s) {
  add_module(a, "generator", *s.generator);
  add_module(a, "discriminator", *s.discriminator);
  add_adam(a, "adam/generator", *s.optimizer_g);
  add_adam(a, "adam/discriminator", *s.optimizer_d);
  if (!s.second_discriminator.is_empty()) {
    add_module(a, "second_discriminator", *s.second_discriminator);
    add_adam(a, "adam/second_discriminator", *s.optimizer_d2);
  }
  if (s.coteaching.initialized()) {
    add_module(a, "peer_a", *s.coteaching.peer_a);
    add_module(a, "peer_b", *s.coteaching.peer_b);
    add_adam(a, "adam/peer_a", *s.coteaching.optimizer_a);
    add_adam(a, "adam/peer_b", *s.coteaching.optimizer_b);
  }
}

void load_state(const CheckpointArchive& a, TrainState& s) {
  load_module(a, "generator", *s.generator);
  load_module(a, "discriminator", *s.discriminator);
  load_adam(a, "adam/generator", *s.optimizer_g);
  load_adam(a, "adam/discriminator", *s.optimizer_d);
  if (!s.second_discriminator.is_empty()) {
    load_module(a, "second_discriminator", *s.second_discriminator);
    load_adam(a, "adam/second_discriminator", *s.optimizer_d2);
  }
  if (s.coteaching.initialized()) {
    load_module(a, "peer_a", *s.coteaching.peer_a);
    load_module(a, "peer_b", *s.coteaching.peer_b);
    load_adam(a, "adam/peer_a", *s.coteaching.optimizer_a);
    load_adam(a, "adam/peer_b", *s.coteaching.optimizer_b);
  }
  s.d_steps = a.manifest().at("d_steps").get<std::int64_t>();
  s.g_steps = a.manifest().at("g_steps").get<std::int64_t>();
}

// Keeps the JSONL rows whose `key` does not exceed `limit`.
void truncate_jsonl(const fs::path& path, const char* key, std::int64_t limit) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> kept;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto row = json::parse(line, nullptr, false);
    if (!row.is_discarded() && row.contains(key) && row.at(key).get<std::int64_t>() <= limit) kept.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& line : kept) out << line << '\n';
}

void write_trajectory(const fs::path& path, const ScoreTrajectory& trajectory) {
  std::ofstream out(path, std::ios::trunc);
  for (const auto& row : trajectory.to_json()) out << row.dump() << '\n';
}

}  // namespace

CheckpointArchive make_checkpoint(TrainState& state, EvalClassifier& eval_classifier, int epoch,
                                  const ScoreTrajectory& trajectory, const std::vector<MetricsReport>& reports,
                                  const Rng& shuffle_rng) {
  CheckpointArchive a;
  auto& m = a.manifest();
  m["format"] = "rmit-checkpoint";
  m["config_hash"] = state.config.hash();
  m["config"] = state.config.to_json();
  m["epoch"] = epoch;
  m["d_steps"] = state.d_steps;
  m["g_steps"] = state.g_steps;
  m["shuffle_rng"] = rng_state(shuffle_rng);
  m["trajectory"] = trajectory.to_json();
  json rows = json::array();
  for (const auto& r : reports) rows.push_back(r.to_json());
  m["reports"] = rows;
  add_state(a, state);
  add_module(a, "eval_classifier", *eval_classifier);
  a.add("torch_rng", torch_rng_state());
  return a;
}

// run_training --------------------------------------------------------------

RunResult run_training(const TrainConfig& config, const TrainingData& data, const RunOptions& options) {
  config.validate();
  const auto c = config.generator.num_domains;
  if (data.train.size() == 0 || data.test.size() == 0) throw InvalidInput("training and test sets must be nonempty");
  if (data.train.num_domains() != c || data.test.num_domains() != c) throw InvalidInput("dataset domain count differs");
  if (data.train.image_size() != config.generator.image_size ||
      data.train.image_channels() != config.generator.image_channels) {
    throw InvalidInput("dataset image shape differs from the network configuration");
  }
  if (data.train.size() < config.batch_size) throw InvalidInput("training set smaller than one batch");

  const bool persist = !options.out_dir.empty();
  const auto checkpoint_path = options.out_dir / "checkpoint.rmit";
  const auto log_path = options.out_dir / "train_log.jsonl";
  const auto metrics_path = options.out_dir / "metrics.jsonl";
  const auto trajectory_path = options.out_dir / "trajectory.jsonl";
  if (persist) fs::create_directories(options.out_dir);

  RunResult result;
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  int start_epoch = 0;
  EvalClassifier eval_classifier{nullptr};
  TrainState state;

  if (options.resume && persist && fs::exists(checkpoint_path)) {
    auto archive = CheckpointArchive::load(checkpoint_path);
    const auto& m = archive.manifest();
    if (m.at("config_hash").get<std::string>() != config.hash()) {
      throw InvalidSpec("checkpoint was written for a different configuration");
    }
    state = TrainState::create(config);
    load_state(archive, state);
    EvalClassifierConfig ecfg;
    ecfg.image_size = data.train.image_size();
    ecfg.image_channels = data.train.image_channels();
    ecfg.num_domains = c;
    eval_classifier = EvalClassifier(ecfg);
    load_module(archive, "eval_classifier", *eval_classifier);
    eval_classifier->eval();
    eval_classifier->mark_trained();
    std::istringstream(m.at("shuffle_rng").get<std::string>()) >> shuffle_rng;
    start_epoch = m.at("epoch").get<int>();
    result.trajectory = ScoreTrajectory::from_json(m.at("trajectory"));
    for (const auto& r : m.at("reports")) result.reports.push_back(MetricsReport::from_json(r));
    set_torch_rng_state(archive.get("torch_rng"));
    truncate_jsonl(log_path, "step", state.d_steps);
    truncate_jsonl(metrics_path, "epoch", start_epoch);
    result.checkpoint = std::move(archive);
  } else {
    eval_classifier = train_eval_classifier(data.train, config.eval_classifier, data.eval_classifier_seed);
    state = TrainState::create(config);
    if (persist) {
      std::ofstream(log_path, std::ios::trunc);
      std::ofstream(metrics_path, std::ios::trunc);
    }
  }

  {
    torch::NoGradGuard no_grad;
    auto predicted = eval_classifier->forward(data.test.images()).argmax(1);
    auto truth = torch::tensor(data.test.clean_labels(), torch::kLong);
    result.eval_classifier_test_accuracy =
        100.0 * predicted.eq(truth).sum().item<double>() / static_cast<double>(data.test.size());
  }
  const auto real_train = embed_images(eval_classifier, data.train.images(), EmbeddingSource::real_train);
  const auto test_labels = data.test.clean_labels();

  const int total = config.total_epochs();
  int epoch = start_epoch;
  for (; epoch < total; ++epoch) {
    if (options.stop_after_epoch && epoch >= *options.stop_after_epoch) break;
    state.set_lr(lr_at(epoch, config));
    std::vector<std::int64_t> order(static_cast<std::size_t>(data.train.size()));
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

    std::ofstream log;
    if (persist) log.open(log_path, std::ios::app);
    auto batches = data.train.training_batches(std::move(order), config.batch_size);
    while (auto batch = batches.next()) {
      batch->images = augment_hflip(batch->images, config.hflip_probability);
      auto step = train_step(state, *batch);
      if (persist) {
        auto row = step.losses.to_json(state.d_steps);
        row["epoch"] = epoch + 1;
        log << row.dump() << '\n';
      }
      if (state.d_steps % config.classifier_eval_every_iterations == 0) {
        result.trajectory.add(state.d_steps, epoch + 1, "classifier_test_accuracy",
                              classifier_accuracy(state, data.test.images(), test_labels));
      }
    }
    log.close();

    const int done = epoch + 1;
    if (done % config.eval_every_epochs == 0) {
      Rng eval_rng(derive_seed(config.seed, "evaluation/" + std::to_string(done)));
      auto evaluation = evaluate_generator(eval_classifier, state.translator(), data.test.images(), test_labels,
                                           real_train, c, eval_rng, config.evaluation);
      evaluation.report.epoch = done;
      result.trajectory.add(state.d_steps, done, "CA", evaluation.report.ca);
      result.trajectory.add(state.d_steps, done, "FID", evaluation.report.fid);
      result.trajectory.add(state.d_steps, done, "IS", evaluation.report.is_score);
      result.trajectory.add(state.d_steps, done, "KID", evaluation.report.kid);
      if (persist) std::ofstream(metrics_path, std::ios::app) << evaluation.report.to_json().dump() << '\n';
      result.reports.push_back(std::move(evaluation.report));
    }
    const bool stopping = options.stop_after_epoch && done >= *options.stop_after_epoch;
    if (done % config.checkpoint_every_epochs == 0 || done == total || stopping) {
      result.checkpoint =
          make_checkpoint(state, eval_classifier, done, result.trajectory, result.reports, shuffle_rng);
      if (persist) {
        result.checkpoint.save(checkpoint_path);
        write_trajectory(trajectory_path, result.trajectory);
      }
    }
  }
  result.epochs_completed = epoch;
  result.d_steps = state.d_steps;
  result.g_steps = state.g_steps;
  return result;
}

}  // namespace rmit
