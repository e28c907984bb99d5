#pragma once

#include <string>

#include "hoi/data.hpp"
#include "hoi/train.hpp"

namespace hoi {

// JSON config files; every key optional, unknown keys rejected.
data::DatasetSpec load_dataset_spec(const std::string& path);
exp::ExperimentConfig load_experiment_config(const std::string& path);

void write_dataset_spec(const std::string& path, const data::DatasetSpec& spec);
void write_default_dataset_spec(const std::string& path);
void write_default_experiment_config(const std::string& path);

}  // namespace hoi
