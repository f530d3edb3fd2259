// Copyright 2026 The Reidbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "reid/embednet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>

#include "reid/common.hpp"

namespace reid {

namespace {

constexpr char kMagic[8] = {'R', 'E', 'I', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr double kMinRawNorm = 1e-12;

void check_tokens(const ModelConfig& config, TokenSpan tokens) {
  if (tokens.empty()) throw ValidationError("cannot embed an empty sequence");
  for (std::int32_t t : tokens) {
    if (t < 0 || t >= config.vocab_size) {
      throw ValidationError("token id " + std::to_string(t) +
                            " outside vocab of size " +
                            std::to_string(config.vocab_size));
    }
  }
}

// Keeps the most recent max_seq_len tokens.
TokenSpan truncate_front(const ModelConfig& config, TokenSpan tokens) {
  const auto cap = static_cast<std::size_t>(config.max_seq_len);
  if (tokens.size() <= cap) return tokens;
  return tokens.subspan(tokens.size() - cap);
}

inline void sigmoid_inplace(Eigen::VectorXd& v) {
  v.array() = 1.0 / (1.0 + (-v.array()).exp());
}

// Per-sequence forward state kept for backprop through time. Buffers are
// sized once to max_seq_len rows and reused via topRows views.
struct SeqTrace {
  Eigen::MatrixXd x;                     // [cap x E]
  Eigen::MatrixXd ax_z, ax_r, ax_c;      // [cap x H] input projections
  Eigen::MatrixXd h_prev, z, r, c, rh;   // [cap x H]
  Eigen::MatrixXd da_z, da_r, da_c;      // [cap x H]
  Eigen::MatrixXd dx;                    // [cap x E]
  Eigen::VectorXd h, y, e;
  Eigen::VectorXd az, ar, ac, dh, dh_new, uc;
  double y_norm = 0.0;
  int T = 0;
  TokenSpan tokens;

  // Grow-only, so a reused workspace settles at the longest sequence seen.
  void ensure(const ModelConfig& cfg, int rows_needed) {
    if (x.rows() >= rows_needed && x.cols() == cfg.token_embed_dim &&
        h_prev.cols() == cfg.hidden_dim && e.size() == cfg.output_dim) {
      return;
    }
    const auto cap = std::max<Eigen::Index>(rows_needed, x.rows());
    x.resize(cap, cfg.token_embed_dim);
    dx.resize(cap, cfg.token_embed_dim);
    for (Eigen::MatrixXd* m : {&ax_z, &ax_r, &ax_c, &h_prev, &z, &r, &c, &rh,
                               &da_z, &da_r, &da_c}) {
      m->resize(cap, cfg.hidden_dim);
    }
    h.resize(cfg.hidden_dim);
    y.resize(cfg.output_dim);
    e.resize(cfg.output_dim);
    for (Eigen::VectorXd* v : {&az, &ar, &ac, &dh, &dh_new, &uc}) {
      v->resize(cfg.hidden_dim);
    }
  }
};

void forward_seq(const ModelParams& params, const ModelConfig& config,
                 TokenSpan tokens, SeqTrace& tr) {
  check_tokens(config, tokens);
  tr.tokens = truncate_front(config, tokens);
  tr.T = static_cast<int>(tr.tokens.size());
  const int T = tr.T;
  tr.ensure(config, T);

  for (int t = 0; t < T; ++t) {
    tr.x.row(t) = params.token_embedding.row(tr.tokens[static_cast<std::size_t>(t)]);
  }
  auto xv = tr.x.topRows(T);
  tr.ax_z.topRows(T).noalias() = xv * params.update.wx;
  tr.ax_r.topRows(T).noalias() = xv * params.reset.wx;
  tr.ax_c.topRows(T).noalias() = xv * params.candidate.wx;

  tr.h.setZero();
  for (int t = 0; t < T; ++t) {
    tr.h_prev.row(t) = tr.h;
    tr.az.noalias() = params.update.wh.transpose() * tr.h;
    tr.az += tr.ax_z.row(t).transpose() + params.update.b;
    sigmoid_inplace(tr.az);
    tr.ar.noalias() = params.reset.wh.transpose() * tr.h;
    tr.ar += tr.ax_r.row(t).transpose() + params.reset.b;
    sigmoid_inplace(tr.ar);
    tr.uc.array() = tr.ar.array() * tr.h.array();  // r (.) h_prev
    tr.ac.noalias() = params.candidate.wh.transpose() * tr.uc;
    tr.ac += tr.ax_c.row(t).transpose() + params.candidate.b;
    tr.ac.array() = tr.ac.array().tanh();
    tr.z.row(t) = tr.az;
    tr.r.row(t) = tr.ar;
    tr.rh.row(t) = tr.uc;
    tr.c.row(t) = tr.ac;
    tr.h.array() =
        (1.0 - tr.az.array()) * tr.h.array() + tr.az.array() * tr.ac.array();
  }

  tr.y.noalias() = params.proj.transpose() * tr.h;
  tr.y += params.proj_b;
  tr.y_norm = tr.y.norm();
  if (!(tr.y_norm > kMinRawNorm)) {
    throw DataError("degenerate embedding: pre-normalization norm is ~0");
  }
  tr.e = tr.y / tr.y_norm;
}

// Accumulates d(loss)/d(params) for one sequence given de = d(loss)/d(e).
void backward_seq(const ModelParams& params, const ModelConfig& config,
                  SeqTrace& tr, const Eigen::VectorXd& de,
                  GradientBuffer& grads) {
  const int T = tr.T;

  // Through the normalization e = y / |y|.
  Eigen::VectorXd dy = (de - tr.e * tr.e.dot(de)) / tr.y_norm;

  grads.proj.noalias() += tr.h * dy.transpose();
  grads.proj_b += dy;
  tr.dh.noalias() = params.proj * dy;

  for (int t = T - 1; t >= 0; --t) {
    auto zt = tr.z.row(t).transpose().array();
    auto rt = tr.r.row(t).transpose().array();
    auto ct = tr.c.row(t).transpose().array();
    auto hp = tr.h_prev.row(t).transpose().array();
    auto dha = tr.dh.array();

    // h_t = (1 - z) (.) h_prev + z (.) c
    tr.ac.array() = dha * zt * (1.0 - ct * ct);            // da_c
    tr.az.array() = dha * (ct - hp) * zt * (1.0 - zt);     // da_z
    tr.dh_new.array() = dha * (1.0 - zt);

    tr.uc.noalias() = params.candidate.wh * tr.ac;
    tr.ar.array() = tr.uc.array() * hp * rt * (1.0 - rt);  // da_r
    tr.dh_new.array() += tr.uc.array() * rt;

    tr.dh_new.noalias() += params.update.wh * tr.az;
    tr.dh_new.noalias() += params.reset.wh * tr.ar;

    tr.da_z.row(t) = tr.az;
    tr.da_r.row(t) = tr.ar;
    tr.da_c.row(t) = tr.ac;
    tr.dh.swap(tr.dh_new);
  }

  auto xv = tr.x.topRows(T);
  auto hprev = tr.h_prev.topRows(T);
  auto daz = tr.da_z.topRows(T);
  auto dar = tr.da_r.topRows(T);
  auto dac = tr.da_c.topRows(T);

  grads.update.wx.noalias() += xv.transpose() * daz;
  grads.update.wh.noalias() += hprev.transpose() * daz;
  grads.update.b += daz.colwise().sum().transpose();
  grads.reset.wx.noalias() += xv.transpose() * dar;
  grads.reset.wh.noalias() += hprev.transpose() * dar;
  grads.reset.b += dar.colwise().sum().transpose();
  grads.candidate.wx.noalias() += xv.transpose() * dac;
  grads.candidate.wh.noalias() += tr.rh.topRows(T).transpose() * dac;
  grads.candidate.b += dac.colwise().sum().transpose();

  auto dxv = tr.dx.topRows(T);
  dxv.noalias() = daz * params.update.wx.transpose();
  dxv.noalias() += dar * params.reset.wx.transpose();
  dxv.noalias() += dac * params.candidate.wx.transpose();
  for (int t = 0; t < T; ++t) {
    grads.token_embedding.row(tr.tokens[static_cast<std::size_t>(t)]) +=
        dxv.row(t);
  }
}

void check_params_shape(const ModelParams& params, const ModelConfig& config) {
  const bool ok =
      params.token_embedding.rows() == config.vocab_size &&
      params.token_embedding.cols() == config.token_embed_dim &&
      params.update.wx.rows() == config.token_embed_dim &&
      params.update.wx.cols() == config.hidden_dim &&
      params.update.wh.rows() == config.hidden_dim &&
      params.update.wh.cols() == config.hidden_dim &&
      params.update.b.size() == config.hidden_dim &&
      params.reset.wx.rows() == config.token_embed_dim &&
      params.candidate.wx.rows() == config.token_embed_dim &&
      params.proj.rows() == config.hidden_dim &&
      params.proj.cols() == config.output_dim &&
      params.proj_b.size() == config.output_dim;
  if (!ok) throw ValidationError("params shapes do not match config");
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 1) throw ValidationError("vocab_size must be >= 1");
  if (token_embed_dim < 1) throw ValidationError("token_embed_dim must be >= 1");
  if (hidden_dim < 1) throw ValidationError("hidden_dim must be >= 1");
  if (output_dim < 1) throw ValidationError("output_dim must be >= 1");
  if (output_dim > 4 * hidden_dim) {
    throw ValidationError("output_dim must be <= 4 * hidden_dim");
  }
  if (max_seq_len < 1) throw ValidationError("max_seq_len must be >= 1");
}

std::size_t ModelParams::count() const {
  auto sz = [](const auto& m) { return static_cast<std::size_t>(m.size()); };
  return sz(token_embedding) + sz(update.wx) + sz(update.wh) + sz(update.b) +
         sz(reset.wx) + sz(reset.wh) + sz(reset.b) + sz(candidate.wx) +
         sz(candidate.wh) + sz(candidate.b) + sz(proj) + sz(proj_b);
}

std::size_t param_count(const ModelConfig& c) {
  const auto v = static_cast<std::size_t>(c.vocab_size);
  const auto e = static_cast<std::size_t>(c.token_embed_dim);
  const auto h = static_cast<std::size_t>(c.hidden_dim);
  const auto d = static_cast<std::size_t>(c.output_dim);
  return v * e + 3 * (e * h + h * h + h) + h * d + d;
}

namespace {

void fill_glorot(Eigen::MatrixXd& m, Rng& rng) {
  const double a =
      std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      m(i, j) = rng.uniform(-a, a);
    }
  }
}

template <typename Fn>
void for_each_tensor(ModelParams& p, Fn&& fn) {
  fn(p.token_embedding);
  for (GruGate* g : {&p.update, &p.reset, &p.candidate}) {
    fn(g->wx);
    fn(g->wh);
    fn(g->b);
  }
  fn(p.proj);
  fn(p.proj_b);
}

template <typename Fn>
void for_each_tensor(const ModelParams& p, Fn&& fn) {
  fn(p.token_embedding);
  for (const GruGate* g : {&p.update, &p.reset, &p.candidate}) {
    fn(g->wx);
    fn(g->wh);
    fn(g->b);
  }
  fn(p.proj);
  fn(p.proj_b);
}

ModelParams allocate_params(const ModelConfig& c) {
  ModelParams p;
  p.token_embedding.resize(c.vocab_size, c.token_embed_dim);
  for (GruGate* g : {&p.update, &p.reset, &p.candidate}) {
    g->wx.resize(c.token_embed_dim, c.hidden_dim);
    g->wh.resize(c.hidden_dim, c.hidden_dim);
    g->b.resize(c.hidden_dim);
  }
  p.proj.resize(c.hidden_dim, c.output_dim);
  p.proj_b.resize(c.output_dim);
  return p;
}

}  // namespace

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  ModelParams p = allocate_params(config);
  Rng rng(config.seed);
  fill_glorot(p.token_embedding, rng);
  for (GruGate* g : {&p.update, &p.reset, &p.candidate}) {
    fill_glorot(g->wx, rng);
    fill_glorot(g->wh, rng);
    g->b.setZero();
  }
  fill_glorot(p.proj, rng);
  p.proj_b.setZero();
  return p;
}

Eigen::VectorXd encode_raw(const ModelParams& params, const ModelConfig& config,
                           TokenSpan tokens) {
  config.validate();
  check_params_shape(params, config);
  SeqTrace tr;
  forward_seq(params, config, tokens, tr);
  return tr.y;
}

Embedding embed_sequence(const ModelParams& params, const ModelConfig& config,
                         TokenSpan tokens) {
  config.validate();
  check_params_shape(params, config);
  SeqTrace tr;
  forward_seq(params, config, tokens, tr);
  return tr.e;
}

Eigen::MatrixXd embed_many(const ModelParams& params, const ModelConfig& config,
                           const std::vector<TokenSpan>& sequences) {
  config.validate();
  check_params_shape(params, config);
  const auto n = static_cast<Eigen::Index>(sequences.size());
  const int H = config.hidden_dim;
  Eigen::MatrixXd out(n, config.output_dim);
  if (n == 0) return out;

  std::vector<TokenSpan> trunc(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    check_tokens(config, sequences[i]);
    trunc[i] = truncate_front(config, sequences[i]);
  }

  // Longest first, so the active set is always a prefix.
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return trunc[a].size() > trunc[b].size();
                   });

  const auto t_max = static_cast<int>(trunc[order[0]].size());
  Eigen::MatrixXd hs = Eigen::MatrixXd::Zero(n, H);
  Eigen::MatrixXd xt(n, config.token_embed_dim);
  Eigen::MatrixXd zt(n, H), rt(n, H), ct(n, H), rh(n, H);

  Eigen::Index active = n;
  for (int t = 0; t < t_max; ++t) {
    while (active > 0 &&
           static_cast<int>(trunc[order[static_cast<std::size_t>(active - 1)]]
                                .size()) <= t) {
      --active;
    }
    const auto a = active;
    for (Eigen::Index i = 0; i < a; ++i) {
      xt.row(i) = params.token_embedding.row(
          trunc[order[static_cast<std::size_t>(i)]][static_cast<std::size_t>(t)]);
    }
    auto xa = xt.topRows(a);
    auto ha = hs.topRows(a);

    zt.topRows(a).noalias() = xa * params.update.wx;
    zt.topRows(a).noalias() += ha * params.update.wh;
    zt.topRows(a).rowwise() += params.update.b.transpose();
    zt.topRows(a).array() = 1.0 / (1.0 + (-zt.topRows(a).array()).exp());

    rt.topRows(a).noalias() = xa * params.reset.wx;
    rt.topRows(a).noalias() += ha * params.reset.wh;
    rt.topRows(a).rowwise() += params.reset.b.transpose();
    rt.topRows(a).array() = 1.0 / (1.0 + (-rt.topRows(a).array()).exp());

    rh.topRows(a).array() = rt.topRows(a).array() * ha.array();
    ct.topRows(a).noalias() = xa * params.candidate.wx;
    ct.topRows(a).noalias() += rh.topRows(a) * params.candidate.wh;
    ct.topRows(a).rowwise() += params.candidate.b.transpose();
    ct.topRows(a).array() = ct.topRows(a).array().tanh();

    ha.array() = (1.0 - zt.topRows(a).array()) * ha.array() +
                 zt.topRows(a).array() * ct.topRows(a).array();
  }

  Eigen::MatrixXd y = hs * params.proj;
  y.rowwise() += params.proj_b.transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = y.row(i).norm();
    if (!(norm > kMinRawNorm)) {
      throw DataError("degenerate embedding: pre-normalization norm is ~0");
    }
    out.row(order[static_cast<std::size_t>(i)]) = y.row(i) / norm;
  }
  return out;
}

GradientBuffer GradientBuffer::zeros(const ModelConfig& c) {
  GradientBuffer g;
  g.token_embedding = Eigen::MatrixXd::Zero(c.vocab_size, c.token_embed_dim);
  for (GruGate* gate : {&g.update, &g.reset, &g.candidate}) {
    gate->wx = Eigen::MatrixXd::Zero(c.token_embed_dim, c.hidden_dim);
    gate->wh = Eigen::MatrixXd::Zero(c.hidden_dim, c.hidden_dim);
    gate->b = Eigen::VectorXd::Zero(c.hidden_dim);
  }
  g.proj = Eigen::MatrixXd::Zero(c.hidden_dim, c.output_dim);
  g.proj_b = Eigen::VectorXd::Zero(c.output_dim);
  return g;
}

void GradientBuffer::set_zero() {
  token_embedding.setZero();
  for (GruGate* g : {&update, &reset, &candidate}) {
    g->wx.setZero();
    g->wh.setZero();
    g->b.setZero();
  }
  proj.setZero();
  proj_b.setZero();
}

void GradientBuffer::add_scaled(const GradientBuffer& o, double s) {
  token_embedding += s * o.token_embedding;
  update.wx += s * o.update.wx;
  update.wh += s * o.update.wh;
  update.b += s * o.update.b;
  reset.wx += s * o.reset.wx;
  reset.wh += s * o.reset.wh;
  reset.b += s * o.reset.b;
  candidate.wx += s * o.candidate.wx;
  candidate.wh += s * o.candidate.wh;
  candidate.b += s * o.candidate.b;
  proj += s * o.proj;
  proj_b += s * o.proj_b;
}

double GradientBuffer::max_abs() const {
  double m = token_embedding.cwiseAbs().maxCoeff();
  for (const GruGate* g : {&update, &reset, &candidate}) {
    m = std::max(m, g->wx.cwiseAbs().maxCoeff());
    m = std::max(m, g->wh.cwiseAbs().maxCoeff());
    m = std::max(m, g->b.cwiseAbs().maxCoeff());
  }
  m = std::max(m, proj.cwiseAbs().maxCoeff());
  m = std::max(m, proj_b.cwiseAbs().maxCoeff());
  return m;
}

bool GradientBuffer::all_finite() const {
  bool ok = token_embedding.allFinite() && proj.allFinite() &&
            proj_b.allFinite();
  for (const GruGate* g : {&update, &reset, &candidate}) {
    ok = ok && g->wx.allFinite() && g->wh.allFinite() && g->b.allFinite();
  }
  return ok;
}

class TripletWorkspace {
 public:
  SeqTrace anchor, positive, negative;
};

TripletWorkspace* new_triplet_workspace(const ModelConfig&) {
  return new TripletWorkspace();
}

void free_triplet_workspace(TripletWorkspace* ws) { delete ws; }

double backward_triplet(const ModelParams& params, const ModelConfig& config,
                        TokenSpan anchor, TokenSpan positive, TokenSpan negative,
                        double margin, GradientBuffer& grads,
                        TripletWorkspace* ws) {
  config.validate();
  check_params_shape(params, config);
  std::unique_ptr<TripletWorkspace> local;
  if (ws == nullptr) {
    local = std::make_unique<TripletWorkspace>();
    ws = local.get();
  }
  forward_seq(params, config, anchor, ws->anchor);
  forward_seq(params, config, positive, ws->positive);
  forward_seq(params, config, negative, ws->negative);

  const Eigen::VectorXd& ea = ws->anchor.e;
  const Eigen::VectorXd& ep = ws->positive.e;
  const Eigen::VectorXd& en = ws->negative.e;
  const double d2_ap = (ea - ep).squaredNorm();
  const double d2_an = (ea - en).squaredNorm();
  const double loss = d2_ap - d2_an + margin;

  grads.set_zero();
  if (loss <= 0.0) return 0.0;

  backward_seq(params, config, ws->anchor, 2.0 * (en - ep), grads);
  backward_seq(params, config, ws->positive, 2.0 * (ep - ea), grads);
  backward_seq(params, config, ws->negative, 2.0 * (ea - en), grads);
  return loss;
}

void save_params(const ModelParams& params, const ModelConfig& config,
                 const std::string& path) {
  config.validate();
  check_params_shape(params, config);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open file for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u32_le(out, kFormatVersion);
  write_u32_le(out, static_cast<std::uint32_t>(config.vocab_size));
  write_u32_le(out, static_cast<std::uint32_t>(config.token_embed_dim));
  write_u32_le(out, static_cast<std::uint32_t>(config.hidden_dim));
  write_u32_le(out, static_cast<std::uint32_t>(config.output_dim));
  write_u32_le(out, static_cast<std::uint32_t>(config.max_seq_len));
  write_u64_le(out, config.seed);
  for_each_tensor(params, [&out](const auto& tensor) {
    if constexpr (std::remove_cvref_t<decltype(tensor)>::ColsAtCompileTime == 1) {
      for (Eigen::Index i = 0; i < tensor.size(); ++i) {
        write_f64_le(out, tensor(i));
      }
    } else {
      for (Eigen::Index i = 0; i < tensor.rows(); ++i) {
        for (Eigen::Index j = 0; j < tensor.cols(); ++j) {
          write_f64_le(out, tensor(i, j));
        }
      }
    }
  });
  if (!out) throw DataError("write failed: " + path);
}

std::pair<ModelConfig, ModelParams> load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) ||
      !std::equal(magic, magic + sizeof(magic), kMagic)) {
    throw DataError("not a checkpoint file (bad magic): " + path);
  }
  const std::uint32_t version = read_u32_le(in);
  if (version != kFormatVersion) {
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version));
  }
  ModelConfig config;
  config.vocab_size = static_cast<int>(read_u32_le(in));
  config.token_embed_dim = static_cast<int>(read_u32_le(in));
  config.hidden_dim = static_cast<int>(read_u32_le(in));
  config.output_dim = static_cast<int>(read_u32_le(in));
  config.max_seq_len = static_cast<int>(read_u32_le(in));
  config.seed = read_u64_le(in);
  config.validate();

  ModelParams params = allocate_params(config);
  for_each_tensor(params, [&in](auto& tensor) {
    if constexpr (std::remove_cvref_t<decltype(tensor)>::ColsAtCompileTime == 1) {
      for (Eigen::Index i = 0; i < tensor.size(); ++i) {
        tensor(i) = read_f64_le(in);
      }
    } else {
      for (Eigen::Index i = 0; i < tensor.rows(); ++i) {
        for (Eigen::Index j = 0; j < tensor.cols(); ++j) {
          tensor(i, j) = read_f64_le(in);
        }
      }
    }
  });
  in.peek();
  if (!in.eof()) throw DataError("trailing bytes in checkpoint: " + path);
  return {config, std::move(params)};
}

}  // namespace reid
