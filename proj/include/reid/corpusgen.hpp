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

#ifndef REID_CORPUSGEN_HPP_
#define REID_CORPUSGEN_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "reid/seqdata.hpp"

namespace reid {

/// Parameters of the synthetic clickstream benchmark. Subjects draw each
/// visit from a mixture of a small per-subject "signature" set of niche
/// domains and an archetype-shared preference distribution, with first-order
/// stickiness (repeating the previous domain within a site session).
///
/// signature_weight tunes identifiability: at 1.0 every visit comes from the
/// subject's signature; at 0.0 (with archetype_count 1) all subjects are
/// statistically exchangeable and any linkage attack collapses to chance.
struct CorpusSpec {
  int n_subjects = 200;
  int vocab_size = 500;
  int n_weeks = 9;
  int visits_lo = 80;
  int visits_hi = 160;
  int signature_size = 6;
  double signature_weight = 0.35;
  int archetype_count = 8;
  std::uint64_t seed = 0;

  /// Throws ValidationError naming the violated field.
  void validate() const;
};

struct PanelistProfile {
  std::string subject_id;
  int archetype_id = 0;
  std::vector<double> base_preferences;       // archetype-shared, sums to 1
  std::vector<std::int32_t> signature_domains;  // sorted, size signature_size
  double transition_bias = 0.0;               // in [0, 1)
};

/// The deterministic first phase of generation: archetype distributions and
/// per-subject profiles. Exposed so the sampling mixture can be audited.
std::vector<PanelistProfile> derive_profiles(const CorpusSpec& spec);

/// Generates the full panel. Byte-identical output for equal specs.
PanelDataset generate_corpus(const CorpusSpec& spec);

}  // namespace reid

#endif  // REID_CORPUSGEN_HPP_
