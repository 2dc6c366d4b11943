// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "manetlab/model.hpp"

#include <random>
#include <sstream>
#include <stdexcept>

namespace manet::model {

int64_t ModelConfig::positions() const {
  const Shape s = visual.output_shape();
  return s[1] * s[2];
}

std::string ModelConfig::variant() const {
  std::vector<std::string> parts;
  if (ga) parts.push_back("GA");
  if (ila) parts.push_back(assignment == alignment::Assignment::kInnerProduct ? "ILA(IP)" : "ILA");
  if (rgl) parts.push_back("RGL");
  if (caf) parts.push_back("CAF");
  if (parts.empty()) return "Baseline";
  std::string out = parts[0];
  for (size_t i = 1; i < parts.size(); ++i) out += "+" + parts[i];
  return out;
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "in=" << visual.in_channels << "x" << visual.in_h << "x" << visual.in_w << ";stages=";
  for (int64_t c : visual.stage_channels) os << c << ",";
  os << ";kernel=" << visual.kernel << ";stride=" << visual.stride << ";embed=" << text.embed_dim
     << ";hidden=" << text.hidden << ";vocab=" << vocab_size << ";L=" << length << ";classes=" << classes
     << ";dg=" << global_dim << ";dc=" << local_dim << ";K=" << centers << ";r1=" << r1 << ";r2=" << r2
     << ";r3=" << r3 << ";se=" << se_ratio << ";flags=" << ga << ila << rgl << caf
     << ";assign=" << alignment::to_string(assignment) << ";init=" << alignment::to_string(center_init);
  return os.str();
}

uint64_t ModelConfig::hash() const {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Model::Model(const ModelConfig& config) : config_(config) {
  if (config.vocab_size < 2) throw std::invalid_argument("vocabulary must hold padding plus at least one word");
  if (config.classes < 1) throw std::invalid_argument("number of identity classes must be positive");
  const int64_t c = config.visual.out_channels();
  if (config.text.hidden != c) throw std::invalid_argument("text hidden size must equal visual channels");
  std::mt19937_64 rng(config.seed);
  visual = encoders::VisualEncoder(config.visual, rng);
  embedding = encoders::WordEmbedding(config.vocab_size, config.text.embed_dim, rng);
  text = encoders::TextEncoder(config.text, rng);
  const int64_t n = config.positions();
  if (config.rgl) rgl = suppression::RelationGuidedLocalization({c, n, config.r1, config.r2}, rng);
  if (config.caf) caf = suppression::ChannelAttentionFiltration({c, n, config.se_ratio, 1e-5}, rng);
  if (config.ila)
    ila = alignment::ImplicitLocalAlignment(
        {c, config.local_dim, config.centers, config.r3, config.assignment, config.center_init}, rng);
  if (config.ga)
    ga = alignment::GlobalAlignment({c, config.global_dim}, rng);
  else
    baseline = alignment::SharedGlobalHead({c, config.global_dim}, rng);
  classifiers = objectives::ClassifierBank(config.classes, config.global_dim, config.ila ? config.centers : 0,
                                           config.local_dim, rng);

  visual.register_params(registry_);
  embedding.register_params(registry_);
  text.register_params(registry_);
  if (config.rgl) rgl.register_params(registry_);
  if (config.caf) caf.register_params(registry_);
  if (config.ila) ila.register_params(registry_);
  if (config.ga)
    ga.register_params(registry_);
  else
    baseline.register_params(registry_);
  classifiers.register_params(registry_);
}

ImageFeatures Model::encode_image(const Tensor& images, NormMode mode) {
  ImageFeatures f;
  const int64_t b = images.dim(0);
  f.features = visual.forward_rows(Var(images));
  const Offsets per_image = uniform_offsets(b, config_.positions());
  f.gated = f.features;
  if (config_.rgl) {
    suppression::RglOutput r = rgl.forward(f.features, mode);
    f.attention = r.attention;
    f.gated = r.gated;
  }
  f.restored = config_.caf ? caf.forward(f.gated).restored : f.gated;
  f.f_tilde = ag::segment_mean(f.gated, per_image);
  f.f_hat = ag::segment_mean(f.restored, per_image);
  return f;
}

Var Model::encode_text(std::span<const int64_t> tokens, std::span<const int64_t> valid_lengths) const {
  const int64_t b = static_cast<int64_t>(valid_lengths.size());
  if (static_cast<int64_t>(tokens.size()) != b * config_.length) throw std::invalid_argument("token count != B*L");
  return text.forward(embedding.forward(tokens), config_.length, valid_lengths);
}

Var Model::global_image(const ImageFeatures& f) const {
  const Offsets per_image = uniform_offsets(f.restored.dim(0) / config_.positions(), config_.positions());
  return config_.ga ? ga.image(f.restored, per_image) : baseline.image(f.restored, per_image);
}

Var Model::global_text(const Var& rows, std::span<const int64_t> valid_lengths) const {
  return config_.ga ? ga.text(rows, config_.length, valid_lengths)
                    : baseline.text(rows, config_.length, valid_lengths);
}

Output Model::forward(const Batch& batch, NormMode mode, alignment::CenterRoute route) {
  Output out;
  out.image = encode_image(batch.images, mode);
  out.text_rows = encode_text(batch.tokens, batch.valid_lengths);
  out.v_global = global_image(out.image);
  out.t_global = global_text(out.text_rows, batch.valid_lengths);
  if (config_.ila) {
    const alignment::ValidRows vr = alignment::valid_rows(config_.length, batch.valid_lengths);
    const Offsets per_image = uniform_offsets(batch.size(), config_.positions());
    alignment::IlaPair p = ila.forward_pair(out.image.restored, per_image, ag::gather_rows(out.text_rows, vr.rows),
                                            vr.offsets, mode, route);
    out.v_local = p.image;
    out.t_local = p.text;
  }
  return out;
}

LossResult Model::loss(const Output& out, std::span<const int64_t> labels, std::span<const int64_t> surrogates,
                       const objectives::LossConfig& config) const {
  Var id = objectives::id_loss(out.v_global, out.t_global, out.v_local, out.t_local, labels, classifiers);
  Var rank_g = objectives::ranking_loss(out.v_global, out.t_global, surrogates, labels, config);
  Var total = ag::add(id, rank_g);
  double rank_l = 0.0, cons = 0.0;
  if (config_.ila) {
    Var r = objectives::ranking_loss(out.v_local, out.t_local, surrogates, labels, config);
    rank_l = r.item();
    total = ag::add(total, r);
  }
  if (config_.caf) {
    Var c = objectives::consistency_loss(out.image.f_tilde, out.image.f_hat, labels, config.alpha3);
    cons = c.item();
    total = ag::add(total, ag::scale(c, config.lambda2));
  }
  LossResult result;
  result.parts = objectives::total_loss(id.item(), rank_g.item(), rank_l, cons, config.lambda2);
  result.total = total;
  return result;
}

namespace {

Tensor slice_batch(const Tensor& images, int64_t start, int64_t count) {
  Shape s = images.shape();
  const int64_t per = images.size() / s[0];
  s[0] = count;
  Tensor out(s);
  std::copy(images.data() + start * per, images.data() + (start + count) * per, out.data());
  return out;
}

void append_rows(Tensor& dst, const Tensor& src, int64_t at) {
  std::copy(src.data(), src.data() + src.size(), dst.data() + at * src.dim(1));
}

}  // namespace

Embeddings Model::embed_images(const Tensor& images, int64_t chunk) {
  NoGradGuard guard;
  const int64_t n = images.dim(0);
  Embeddings e;
  e.global = Tensor(Shape{n, config_.global_dim});
  if (config_.ila) e.local = Tensor(Shape{n, config_.centers * config_.local_dim});
  for (int64_t s = 0; s < n; s += chunk) {
    const int64_t m = std::min(chunk, n - s);
    ImageFeatures f = encode_image(slice_batch(images, s, m), NormMode::kFrozen);
    append_rows(e.global, global_image(f).value(), s);
    if (config_.ila) append_rows(e.local, ila.forward(f.restored, uniform_offsets(m, config_.positions()),
                                                      NormMode::kFrozen).value(), s);
  }
  return e;
}

Embeddings Model::embed_texts(std::span<const int64_t> tokens, std::span<const int64_t> valid_lengths,
                              int64_t chunk) {
  NoGradGuard guard;
  const int64_t n = static_cast<int64_t>(valid_lengths.size());
  const int64_t len = config_.length;
  Embeddings e;
  e.global = Tensor(Shape{n, config_.global_dim});
  if (config_.ila) e.local = Tensor(Shape{n, config_.centers * config_.local_dim});
  for (int64_t s = 0; s < n; s += chunk) {
    const int64_t m = std::min(chunk, n - s);
    auto tok = tokens.subspan(static_cast<size_t>(s * len), static_cast<size_t>(m * len));
    auto val = valid_lengths.subspan(static_cast<size_t>(s), static_cast<size_t>(m));
    Var rows = encode_text(tok, val);
    append_rows(e.global, global_text(rows, val).value(), s);
    if (config_.ila) {
      const alignment::ValidRows vr = alignment::valid_rows(len, val);
      append_rows(e.local,
                  ila.forward(ag::gather_rows(rows, vr.rows), vr.offsets, NormMode::kFrozen, alignment::Modality::kText)
                      .value(),
                  s);
    }
  }
  return e;
}

Tensor Model::attention_map(const Tensor& images) {
  NoGradGuard guard;
  const int64_t b = images.dim(0), n = config_.positions();
  Tensor out(Shape{b, n}, 1.0);
  if (!config_.rgl) return out;
  const Tensor a = encode_image(images, NormMode::kFrozen).attention.value();
  const int64_t c = a.dim(1);
  for (int64_t r = 0; r < b * n; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) s += a.at(r, j);
    out[r] = s / static_cast<double>(c);
  }
  return out;
}

}  // namespace manet::model
