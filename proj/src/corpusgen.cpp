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

#include "reid/corpusgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "reid/common.hpp"

namespace reid {

namespace {

constexpr double kZipfExponent = 1.1;

// Stickiness is an archetype-level trait. With a single archetype every
// subject shares the same value, which keeps the signature_weight = 0,
// archetype_count = 1 corpus exactly exchangeable.
double archetype_bias(int archetype_id, int archetype_count) {
  if (archetype_count <= 1) return 0.2;
  return 0.1 + 0.3 * static_cast<double>(archetype_id) /
                   static_cast<double>(archetype_count - 1);
}

std::string padded_id(char prefix, int index, int total) {
  int width = 1;
  for (int n = total - 1; n >= 10; n /= 10) ++width;
  width = std::max(width, 3);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%0*d", prefix, width, index);
  return buf;
}

// Cumulative distribution for inverse-transform sampling.
std::vector<double> cumulative(const std::vector<double>& probs) {
  std::vector<double> cdf(probs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    cdf[i] = acc;
  }
  cdf.back() = 1.0;
  return cdf;
}

std::int32_t sample_cdf(const std::vector<double>& cdf, double u) {
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return static_cast<std::int32_t>(
      std::min<std::ptrdiff_t>(it - cdf.begin(),
                               static_cast<std::ptrdiff_t>(cdf.size()) - 1));
}

std::vector<std::vector<double>> archetype_distributions(
    const CorpusSpec& spec, Rng& rng) {
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(spec.archetype_count));
  for (int a = 0; a < spec.archetype_count; ++a) {
    std::vector<std::int32_t> perm(static_cast<std::size_t>(spec.vocab_size));
    for (std::size_t i = 0; i < perm.size(); ++i) {
      perm[i] = static_cast<std::int32_t>(i);
    }
    rng.shuffle(perm);
    std::vector<double> probs(perm.size(), 0.0);
    double total = 0.0;
    for (std::size_t rank = 0; rank < perm.size(); ++rank) {
      const double w = std::pow(static_cast<double>(rank + 1), -kZipfExponent);
      probs[static_cast<std::size_t>(perm[rank])] = w;
      total += w;
    }
    for (double& p : probs) p /= total;
    out.push_back(std::move(probs));
  }
  return out;
}

}  // namespace

void CorpusSpec::validate() const {
  if (n_subjects < 1) throw ValidationError("n_subjects must be >= 1");
  if (vocab_size < 1) throw ValidationError("vocab_size must be >= 1");
  if (n_weeks < 1) throw ValidationError("n_weeks must be >= 1");
  if (visits_lo < 1) throw ValidationError("visits_per_week.lo must be >= 1");
  if (visits_lo > visits_hi) {
    throw ValidationError("visits_per_week.lo must be <= visits_per_week.hi");
  }
  if (signature_size < 1) throw ValidationError("signature_size must be >= 1");
  if (vocab_size < 2 * signature_size) {
    throw ValidationError("vocab_size must be >= 2 * signature_size");
  }
  // The type contract says a fraction, but both degenerate endpoints are
  // meaningful corpora (pure-signature and exchangeable), so they are legal.
  if (signature_weight < 0.0 || signature_weight > 1.0) {
    throw ValidationError("signature_weight must be in [0, 1]");
  }
  if (archetype_count < 1) throw ValidationError("archetype_count must be >= 1");
}

std::vector<PanelistProfile> derive_profiles(const CorpusSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "corpus-profiles"));
  const auto archetypes = archetype_distributions(spec, rng);

  std::vector<PanelistProfile> profiles;
  profiles.reserve(static_cast<std::size_t>(spec.n_subjects));
  std::vector<std::int32_t> vocab_ids(static_cast<std::size_t>(spec.vocab_size));
  for (std::size_t i = 0; i < vocab_ids.size(); ++i) {
    vocab_ids[i] = static_cast<std::int32_t>(i);
  }

  for (int s = 0; s < spec.n_subjects; ++s) {
    PanelistProfile p;
    p.subject_id = padded_id('s', s, spec.n_subjects);
    p.archetype_id = s % spec.archetype_count;
    p.base_preferences = archetypes[static_cast<std::size_t>(p.archetype_id)];
    p.transition_bias = archetype_bias(p.archetype_id, spec.archetype_count);
    // Partial Fisher-Yates: the first signature_size entries become the set.
    for (int k = 0; k < spec.signature_size; ++k) {
      const auto j = static_cast<std::size_t>(k) +
                     rng.below(vocab_ids.size() - static_cast<std::size_t>(k));
      std::swap(vocab_ids[static_cast<std::size_t>(k)], vocab_ids[j]);
    }
    p.signature_domains.assign(
        vocab_ids.begin(), vocab_ids.begin() + spec.signature_size);
    std::sort(p.signature_domains.begin(), p.signature_domains.end());
    profiles.push_back(std::move(p));
  }
  return profiles;
}

PanelDataset generate_corpus(const CorpusSpec& spec) {
  const auto profiles = derive_profiles(spec);

  Vocab vocab;
  for (int t = 0; t < spec.vocab_size; ++t) {
    vocab.add(padded_id('d', t, spec.vocab_size));
  }

  // Per-archetype CDFs, built once.
  std::vector<std::vector<double>> cdfs;
  cdfs.reserve(static_cast<std::size_t>(spec.archetype_count));
  for (int a = 0; a < spec.archetype_count; ++a) {
    for (const auto& p : profiles) {
      if (p.archetype_id == a) {
        cdfs.push_back(cumulative(p.base_preferences));
        break;
      }
    }
    if (static_cast<int>(cdfs.size()) == a) {
      // Archetype without subjects (more archetypes than subjects).
      cdfs.emplace_back();
    }
  }

  Rng rng(derive_seed(spec.seed, "corpus-events"));
  std::vector<WeekSequence> sequences;
  sequences.reserve(profiles.size() * static_cast<std::size_t>(spec.n_weeks));

  for (const PanelistProfile& prof : profiles) {
    const auto& cdf = cdfs[static_cast<std::size_t>(prof.archetype_id)];
    for (int w = 0; w < spec.n_weeks; ++w) {
      WeekSequence seq;
      seq.subject_id = prof.subject_id;
      seq.week_index = w;
      const auto len = static_cast<std::size_t>(
          rng.range(spec.visits_lo, spec.visits_hi));
      seq.tokens.reserve(len);
      for (std::size_t p = 0; p < len; ++p) {
        std::int32_t token;
        if (p > 0 && rng.uniform() < prof.transition_bias) {
          token = seq.tokens.back();  // continue the site session
        } else if (rng.uniform() < spec.signature_weight) {
          token = prof.signature_domains[static_cast<std::size_t>(
              rng.below(prof.signature_domains.size()))];
        } else {
          token = sample_cdf(cdf, rng.uniform());
        }
        seq.tokens.push_back(token);
      }
      sequences.push_back(std::move(seq));
    }
  }
  return PanelDataset::from_sequences(std::move(vocab), std::move(sequences));
}

}  // namespace reid
