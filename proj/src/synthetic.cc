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

#include "mergeforge/synthetic.h"

#include <fstream>
#include <random>

#include "mergeforge/error.h"

namespace mf::synthetic {

namespace {

Tensor RandomTensor(std::mt19937_64& rng, std::string name, Shape shape,
                    DType dtype) {
  std::normal_distribution<float> dist(0.0f, 0.02f);
  std::vector<float> values(NumElements(shape));
  for (float& v : values) v = dist(rng);
  return Tensor::FromFloats(std::move(name), std::move(shape), values, dtype);
}

constexpr const char* kWords[] = {
    "revenue",   "quarter",   "fiscal",    "liquidity", "segment",
    "operating", "income",    "risk",      "market",    "capital",
    "expenses",  "net",       "growth",    "company",   "statements",
    "interest",  "exposure",  "credit",    "holders",   "securities",
    "reported",  "increased", "decreased", "compared",  "period"};

std::string Sentence(std::mt19937_64& rng, int words) {
  std::uniform_int_distribution<size_t> pick(0, std::size(kWords) - 1);
  std::string out;
  for (int i = 0; i < words; ++i) {
    if (i > 0) out += ' ';
    out += kWords[pick(rng)];
  }
  out[0] = static_cast<char>(out[0] - 'a' + 'A');
  return out + ".";
}

std::string Paragraph(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> sentences(3, 6);
  std::uniform_int_distribution<int> words(6, 14);
  std::string out;
  const int n = sentences(rng);
  for (int i = 0; i < n; ++i) {
    if (i > 0) out += ' ';
    out += Sentence(rng, words(rng));
  }
  return out;
}

std::string HtmlFiling(std::mt19937_64& rng, size_t i) {
  std::string html = "<!DOCTYPE html>\n<html><head><title>10-K " +
                     std::to_string(i) +
                     "</title><style>p{margin:0}</style></head><body>\n"
                     "<nav><a href=\"/\">Home</a> <a href=\"/filings\">Filings</a></nav>\n"
                     "<h1>Item " +
                     std::to_string(i % 15 + 1) + "</h1>\n";
  for (int p = 0; p < 3; ++p) html += "<p>" + Paragraph(rng) + " &amp; more.</p>\n";
  html += "<ul><li>" + Sentence(rng, 5) + "</li><li>" + Sentence(rng, 4) +
          "</li></ul>\n<script>var tracking = 1;</script>\n"
          "<div><a href=\"/a\">Terms</a> | <a href=\"/b\">Privacy</a></div>\n"
          "</body></html>\n";
  return html;
}

}  // namespace

std::vector<Tensor> ToyLlama(uint64_t seed, const ToyModelShape& shape,
                             DType dtype) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor> tensors;
  const uint64_t h = shape.hidden;
  const uint64_t m = shape.intermediate;
  tensors.push_back(RandomTensor(rng, "model.embed_tokens.weight", {shape.vocab, h}, dtype));
  for (uint32_t l = 0; l < shape.layers; ++l) {
    const std::string prefix = "model.layers." + std::to_string(l) + ".";
    for (const char* proj : {"q_proj", "k_proj", "v_proj", "o_proj"}) {
      tensors.push_back(RandomTensor(
          rng, prefix + "self_attn." + proj + ".weight", {h, h}, dtype));
    }
    tensors.push_back(RandomTensor(rng, prefix + "mlp.gate_proj.weight", {m, h}, dtype));
    tensors.push_back(RandomTensor(rng, prefix + "mlp.up_proj.weight", {m, h}, dtype));
    tensors.push_back(RandomTensor(rng, prefix + "mlp.down_proj.weight", {h, m}, dtype));
    tensors.push_back(RandomTensor(rng, prefix + "input_layernorm.weight", {h}, dtype));
    tensors.push_back(
        RandomTensor(rng, prefix + "post_attention_layernorm.weight", {h}, dtype));
  }
  tensors.push_back(RandomTensor(rng, "model.norm.weight", {h}, dtype));
  tensors.push_back(RandomTensor(rng, "lm_head.weight", {shape.vocab, h}, dtype));
  return tensors;
}

std::vector<Tensor> Perturb(const std::vector<Tensor>& model, uint64_t seed,
                            float scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, scale);
  std::vector<Tensor> out;
  out.reserve(model.size());
  for (const Tensor& t : model) {
    std::vector<float> values = t.ToFloats();
    for (float& v : values) v += dist(rng);
    out.push_back(Tensor::FromFloats(t.spec.name, t.spec.shape, values, t.spec.dtype));
  }
  return out;
}

std::vector<SyntheticDocument> FilingCorpus(size_t count, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<SyntheticDocument> docs;
  docs.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    const std::string stem = "doc" + std::to_string(i);
    const std::string dir = "batch" + std::to_string(i % 7) + "/";
    switch (i % 10) {
      case 0:
      case 1:
      case 2:
      case 3:
        docs.push_back({dir + stem + ".html", HtmlFiling(rng, i)});
        break;
      case 4:
      case 5:
        docs.push_back({dir + stem + ".txt", Paragraph(rng) + "\r\n\r\n\r\n\r\n" +
                                                 Paragraph(rng) + "   \n"});
        break;
      case 6:
        docs.push_back({dir + stem + ".md", "# Filing " + std::to_string(i) +
                                                "\n\n" + Paragraph(rng) + "\n"});
        break;
      case 7:
        docs.push_back({dir + stem + ".txt",
                        "%PDF-1.7\n%\xE2\xE3\xCF\xD3\n1 0 obj\n<< /Type /Catalog >>\nendobj\n"});
        break;
      case 8:
        docs.push_back({dir + stem + (i % 20 == 8 ? ".xlsx" : ".zip"),
                        std::string("PK\x03\x04\x14\x00\x00\x00", 8) + "payload"});
        break;
      case 9:
        docs.push_back({dir + stem + ".txt", "Short note " + std::to_string(i) + "."});
        break;
    }
  }
  return docs;
}

void WriteCorpus(const std::filesystem::path& root,
                 const std::vector<SyntheticDocument>& docs) {
  for (const auto& doc : docs) {
    const std::filesystem::path path = root / doc.name;
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out.write(doc.bytes.data(), static_cast<std::streamsize>(doc.bytes.size()));
    if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  }
}

}  // namespace mf::synthetic
