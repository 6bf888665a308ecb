// Copyright 2026 The advtts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// JSON run configuration mirroring the library config structs.
//
// {
//   "stft": {"sample_rate": 22050, ...},
//   "train": {"batch_size": 8, "lr": 1e-4, ..., "fixed_fm": 10},
//   "weights": {"lambda_d": 1, ...},
//   "generator": {"hidden_dim": 128, ..., "variance": {"filter": 128}},
//   "discriminator": {"shared_channels": [64, 128, 512], ...}
// }
//
// Every key is optional; unknown keys are rejected.

#pragma once

#include <filesystem>
#include <string>

#include "advtts/dataio.h"
#include "advtts/trainer.h"

namespace advtts {

struct RunConfig {
  StftConfig stft;
  TrainConfig train;
};

// Throws std::invalid_argument on unknown keys, wrong types or broken
// invariants.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace advtts
