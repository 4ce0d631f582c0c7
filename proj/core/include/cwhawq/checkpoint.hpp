// Copyright 2026 The cwhawq Authors.
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

#pragma once

#include <filesystem>
#include <string>

#include "cwhawq/model.hpp"

namespace cwhawq {

/// Binary checkpoint layout, all integers and reals little-endian:
///   "NNQ1" | u32 version | str descriptor | str metadata (JSON) | u32 count |
///   count x (str name | u32 rank | rank x u64 dim | f64 values)
/// where str is u32 length followed by bytes. Quantizer state is stored as
/// named tensors ("quant.w.<layer>.bits", "quant.a.<layer>.bits",
/// "quant.a.<layer>.alpha"); SAWB coefficients live in the metadata.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace cwhawq
