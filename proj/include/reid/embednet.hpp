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

#ifndef REID_EMBEDNET_HPP_
#define REID_EMBEDNET_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace reid {

/// Compact gated recurrent sequence encoder. A token stream is embedded,
/// run through a single GRU layer left to right from a zero state, and the
/// final hidden state is projected and L2-normalized, so Euclidean and
/// cosine orderings coincide in the output space.
///
/// All arithmetic is in 64-bit floats; gradients are exact analytic
/// derivatives (checked against finite differences in the test suite).
struct ModelConfig {
  int vocab_size = 0;
  int token_embed_dim = 32;
  int hidden_dim = 64;
  int output_dim = 32;
  int max_seq_len = 256;  // longer sequences are truncated from the front
  std::uint64_t seed = 0;

  void validate() const;
};

struct GruGate {
  Eigen::MatrixXd wx;  // [token_embed_dim x hidden_dim]
  Eigen::MatrixXd wh;  // [hidden_dim x hidden_dim]
  Eigen::VectorXd b;   // [hidden_dim]
};

/// All learnable tensors, in their fixed serialization order:
/// token_embedding, update gate, reset gate, candidate gate, projection.
struct ModelParams {
  Eigen::MatrixXd token_embedding;  // [vocab_size x token_embed_dim]
  GruGate update;
  GruGate reset;
  GruGate candidate;
  Eigen::MatrixXd proj;    // [hidden_dim x output_dim]
  Eigen::VectorXd proj_b;  // [output_dim]

  std::size_t count() const;
};

std::size_t param_count(const ModelConfig& config);

/// Unit-norm latent vector of length output_dim.
using Embedding = Eigen::VectorXd;

using TokenSpan = std::span<const std::int32_t>;

/// Gradient accumulator, shape-congruent with ModelParams.
struct GradientBuffer {
  Eigen::MatrixXd token_embedding;
  GruGate update;
  GruGate reset;
  GruGate candidate;
  Eigen::MatrixXd proj;
  Eigen::VectorXd proj_b;

  static GradientBuffer zeros(const ModelConfig& config);
  void set_zero();
  void add_scaled(const GradientBuffer& other, double scale);
  double max_abs() const;
  bool all_finite() const;
};

/// Applies `fn` to each tensor member, in serialization order, across any
/// number of shape-congruent structures (ModelParams or GradientBuffer).
template <typename Fn, typename... Ts>
void visit_tensors(Fn&& fn, Ts&&... ts) {
  fn(ts.token_embedding...);
  fn(ts.update.wx...);
  fn(ts.update.wh...);
  fn(ts.update.b...);
  fn(ts.reset.wx...);
  fn(ts.reset.wh...);
  fn(ts.reset.b...);
  fn(ts.candidate.wx...);
  fn(ts.candidate.wh...);
  fn(ts.candidate.b...);
  fn(ts.proj...);
  fn(ts.proj_b...);
}

/// Deterministic Glorot-uniform initialization; biases zero. Tensors are
/// filled in serialization order, row-major, from one stream seeded by
/// config.seed.
ModelParams init_params(const ModelConfig& config);

/// Forward pass without the final normalization (the raw projection).
Eigen::VectorXd encode_raw(const ModelParams& params, const ModelConfig& config,
                           TokenSpan tokens);

Embedding embed_sequence(const ModelParams& params, const ModelConfig& config,
                         TokenSpan tokens);

/// Lockstep batched forward pass over many sequences; one row per input, in
/// input order. Considerably faster than calling embed_sequence in a loop.
/// Results can differ from the single-sequence path only by float summation
/// order (~1e-15); each path is itself deterministic.
Eigen::MatrixXd embed_many(const ModelParams& params, const ModelConfig& config,
                           const std::vector<TokenSpan>& sequences);

/// Reusable per-thread scratch for backward_triplet; avoids reallocation.
class TripletWorkspace;
TripletWorkspace* new_triplet_workspace(const ModelConfig& config);
void free_triplet_workspace(TripletWorkspace* ws);

struct TripletWorkspaceDeleter {
  void operator()(TripletWorkspace* ws) const { free_triplet_workspace(ws); }
};

/// Squared-distance hinge triplet loss over unit embeddings:
///   loss = max(0, d2(a,p) - d2(a,n) + margin).
/// Writes exact analytic gradients (through normalization, projection and
/// backprop through time) into `grads`, overwriting it. When the hinge is
/// inactive the gradients are exactly zero.
double backward_triplet(const ModelParams& params, const ModelConfig& config,
                        TokenSpan anchor, TokenSpan positive, TokenSpan negative,
                        double margin, GradientBuffer& grads,
                        TripletWorkspace* ws = nullptr);

/// Versioned binary checkpoint: magic, format version, config block, then
/// little-endian 64-bit float tensors in declared order.
void save_params(const ModelParams& params, const ModelConfig& config,
                 const std::string& path);
std::pair<ModelConfig, ModelParams> load_params(const std::string& path);

}  // namespace reid

#endif  // REID_EMBEDNET_HPP_
