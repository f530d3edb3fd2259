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

#ifndef REID_SEQDATA_HPP_
#define REID_SEQDATA_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace reid {

/// Dense bijective mapping between token strings and ids in [0, size).
class Vocab {
 public:
  Vocab() = default;

  /// Returns the id of `token`, inserting it if unseen.
  std::int32_t add(const std::string& token);
  std::optional<std::int32_t> find(const std::string& token) const;
  const std::string& token(std::int32_t id) const;
  std::int32_t size() const { return static_cast<std::int32_t>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::unordered_map<std::string, std::int32_t> ids_;
  std::vector<std::string> tokens_;
};

/// One calendar week of one subject: the ordered token stream.
struct WeekSequence {
  std::string subject_id;
  int week_index = 0;
  std::vector<std::int32_t> tokens;
};

/// Immutable panel of per-subject week sequences over a shared vocab.
/// Sequences are held in canonical order (subject, week); all transforms
/// produce new datasets, so read-sharing across threads is safe.
class PanelDataset {
 public:
  PanelDataset() = default;

  /// Sorts, indexes and validates. Throws DataError on empty sequences,
  /// out-of-vocab tokens or duplicate (subject, week) pairs.
  static PanelDataset from_sequences(Vocab vocab,
                                     std::vector<WeekSequence> sequences);

  const Vocab& vocab() const { return vocab_; }
  const std::vector<WeekSequence>& sequences() const { return sequences_; }

  /// Subject ids in canonical (sorted) order.
  const std::vector<std::string>& subjects() const { return subjects_; }
  std::size_t n_subjects() const { return subjects_.size(); }
  std::size_t n_sequences() const { return sequences_.size(); }
  std::size_t n_events() const { return n_events_; }

  std::optional<std::size_t> subject_index(const std::string& id) const;

  /// The weeks of one subject, ordered by week index.
  std::span<const WeekSequence> subject_weeks(std::size_t subject_idx) const;

  int min_week() const;
  int max_week() const;

  const std::optional<int>& period_boundary() const { return period_boundary_; }
  void set_period_boundary(int boundary) { period_boundary_ = boundary; }

 private:
  Vocab vocab_;
  std::vector<WeekSequence> sequences_;
  std::vector<std::string> subjects_;
  std::vector<std::pair<std::size_t, std::size_t>> slices_;  // begin, count
  std::unordered_map<std::string, std::size_t> subject_idx_;
  std::optional<int> period_boundary_;
  std::size_t n_events_ = 0;
};

enum class FileFormat { jsonl, csv };

/// Event-log ingestion. JSONL rows look like
///   {"s":"s0007","w":3,"p":0,"t":"d0412"}
/// and CSV files carry the header `subject,week,position,token`.
/// The vocab is built from distinct tokens in first-seen (file) order.
PanelDataset load_panel(const std::string& path, FileFormat format);

/// Writes the canonical event log: rows ordered by (subject, week, position).
/// With `anonymize`, subject ids are replaced by opaque ids in canonical
/// order, emulating a released file without ground truth.
void save_panel(const PanelDataset& data, const std::string& path,
                FileFormat format, bool anonymize = false);

FileFormat format_from_path(const std::string& path);

struct PeriodSplit {
  PanelDataset released;   // weeks <  boundary (dataset D)
  PanelDataset auxiliary;  // weeks >= boundary (dataset A)
  // Coverage summary: subjects present on only one side.
  std::vector<std::string> released_only;
  std::vector<std::string> auxiliary_only;
};

/// Splits by week index. `boundary` must be strictly inside the week range.
PeriodSplit split_periods(const PanelDataset& data, int boundary);

/// Inverse of split_periods on canonical ordering. Vocabs must be identical.
PanelDataset merge_panels(const PanelDataset& a, const PanelDataset& b);

/// Subject-level disjoint partition; sizes differ by at most one for
/// fraction 0.5. Deterministic under seed.
std::pair<PanelDataset, PanelDataset> split_train_holdout(
    const PanelDataset& data, double fraction, std::uint64_t seed);

struct PerturbSpec {
  double flip_rate = 0.0;  // in [0, 1]
  std::uint64_t seed = 0;
  // Donor scope: each flipped event is redrawn uniformly from the pooled
  // events of all other subjects (the only scope supported).
};

/// Replaces each event independently with probability flip_rate by an event
/// drawn uniformly from the pooled events of all other subjects. Sequence
/// lengths and ordering are unchanged.
PanelDataset perturb(const PanelDataset& data, const PerturbSpec& spec);

}  // namespace reid

#endif  // REID_SEQDATA_HPP_
