#pragma once

// Seconds-scale training configurations for trainer and runner tests.

#include <json.hpp>

#include "rmit/experiment.hpp"
#include "rmit/trainer.hpp"

namespace oracle {

inline nlohmann::json tiny_base() {
  return nlohmann::json::parse(R"({
    "schedule": {"epochs_flat": 2, "epochs_decay": 2, "batch_size": 8},
    "generator": {"image_size": 16, "base_width": 4, "num_res_blocks": 1},
    "discriminator": {"image_size": 16, "base_width": 4, "num_down": 2},
    "cadence": {"eval_every_epochs": 2, "classifier_eval_every_iterations": 4, "checkpoint_every_epochs": 2},
    "evaluation": {"kid_splits": 2, "kid_split_size": 10},
    "eval_classifier": {"iterations": 20}
  })");
}

inline nlohmann::json tiny_dataset_json() {
  return nlohmann::json::parse(R"({
    "kind": "synthetic", "num_domains": 3, "samples_per_domain": 12, "image_size": 16,
    "test_samples_per_domain": 6, "seed": 1, "test_seed": 2
  })");
}

inline rmit::DatasetSpec tiny_dataset() { return rmit::DatasetSpec::from_json(tiny_dataset_json()); }

inline rmit::TrainConfig tiny_config(rmit::Variant variant, std::uint64_t seed = 0, nlohmann::json extra = {}) {
  auto j = tiny_base();
  j["variant"] = std::string(rmit::to_string(variant));
  j["num_domains"] = 3;
  j["seed"] = seed;
  if (!extra.is_null()) j.merge_patch(extra);
  return rmit::TrainConfig::from_json(j);
}

inline rmit::ExperimentPlan tiny_plan(const std::string& name) {
  nlohmann::json j;
  j["name"] = name;
  j["dataset"] = tiny_dataset_json();
  j["base"] = tiny_base();
  j["cells"] = nlohmann::json::parse(R"([
    {"variant": "StarGAN", "noise": {"kind": "symmetric", "rate": 0.5}, "seeds": [0, 1, 2]},
    {"variant": "RMIT", "noise": {"kind": "symmetric", "rate": 0.5}, "seeds": [0, 1]},
    {"variant": "RMIT_recyc-vcyc", "classifier": "coteaching", "alpha": 0.5,
     "noise": {"kind": "symmetric", "rate": 0.5}, "seeds": [0]}
  ])");
  return rmit::ExperimentPlan::from_json(j);
}

}  // namespace oracle
