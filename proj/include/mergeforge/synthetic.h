/* Copyright 2026 The MergeForge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef MERGEFORGE_SYNTHETIC_H_
#define MERGEFORGE_SYNTHETIC_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mergeforge/checkpoint.h"

// Small deterministic stand-ins for real artifacts, used by tests, the
// acceptance suite and the examples in the README.
namespace mf::synthetic {

struct ToyModelShape {
  uint32_t layers = 4;
  uint64_t hidden = 8;
  uint64_t intermediate = 12;
  uint64_t vocab = 16;
};

// Llama-style tensor set: embeddings, per-layer attention/MLP projections and
// norms, final norm and lm_head. Values are N(0, 0.02) drawn from `seed`.
std::vector<Tensor> ToyLlama(uint64_t seed, const ToyModelShape& shape = {},
                             DType dtype = DType::kF32);

// Copy of `model` with N(0, scale) noise added to every element, standing in
// for a fine-tuned descendant.
std::vector<Tensor> Perturb(const std::vector<Tensor>& model, uint64_t seed,
                            float scale = 0.01f);

// One document of the synthetic filing corpus.
struct SyntheticDocument {
  std::string name;  // relative path, extension chosen per kind
  std::string bytes;
};

// `count` documents cycling through HTML filings, plain text, Markdown, PDF,
// ZIP and XLSX payloads plus a few too-short texts. Deterministic in `seed`.
std::vector<SyntheticDocument> FilingCorpus(size_t count, uint64_t seed);

// Writes documents under `root`, creating parent directories.
void WriteCorpus(const std::filesystem::path& root,
                 const std::vector<SyntheticDocument>& docs);

}  // namespace mf::synthetic

#endif  // MERGEFORGE_SYNTHETIC_H_
