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

#include "reid/seqdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "reid/common.hpp"

namespace reid {

std::int32_t Vocab::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const auto id = static_cast<std::int32_t>(tokens_.size());
  ids_.emplace(token, id);
  tokens_.push_back(token);
  return id;
}

std::optional<std::int32_t> Vocab::find(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || id >= size()) {
    throw DataError("token id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

PanelDataset PanelDataset::from_sequences(Vocab vocab,
                                          std::vector<WeekSequence> sequences) {
  std::sort(sequences.begin(), sequences.end(),
            [](const WeekSequence& a, const WeekSequence& b) {
              if (a.subject_id != b.subject_id) return a.subject_id < b.subject_id;
              return a.week_index < b.week_index;
            });

  PanelDataset out;
  out.vocab_ = std::move(vocab);
  out.sequences_ = std::move(sequences);

  for (std::size_t i = 0; i < out.sequences_.size(); ++i) {
    const WeekSequence& seq = out.sequences_[i];
    if (seq.tokens.empty()) {
      throw DataError("empty week sequence: subject " + seq.subject_id +
                      " week " + std::to_string(seq.week_index));
    }
    for (std::int32_t t : seq.tokens) {
      if (t < 0 || t >= out.vocab_.size()) {
        throw DataError("token id " + std::to_string(t) +
                        " outside vocab of size " +
                        std::to_string(out.vocab_.size()));
      }
    }
    if (i > 0) {
      const WeekSequence& prev = out.sequences_[i - 1];
      if (prev.subject_id == seq.subject_id &&
          prev.week_index == seq.week_index) {
        throw DataError("duplicate (subject, week): " + seq.subject_id + ", " +
                        std::to_string(seq.week_index));
      }
    }
    out.n_events_ += seq.tokens.size();
  }

  std::size_t begin = 0;
  for (std::size_t i = 0; i <= out.sequences_.size(); ++i) {
    const bool flush =
        i == out.sequences_.size() ||
        (i > begin && out.sequences_[i].subject_id != out.sequences_[begin].subject_id);
    if (flush && i > begin) {
      const std::string& id = out.sequences_[begin].subject_id;
      out.subject_idx_.emplace(id, out.subjects_.size());
      out.subjects_.push_back(id);
      out.slices_.emplace_back(begin, i - begin);
      begin = i;
    }
  }
  return out;
}

std::optional<std::size_t> PanelDataset::subject_index(
    const std::string& id) const {
  auto it = subject_idx_.find(id);
  if (it == subject_idx_.end()) return std::nullopt;
  return it->second;
}

std::span<const WeekSequence> PanelDataset::subject_weeks(
    std::size_t subject_idx) const {
  const auto& [begin, count] = slices_.at(subject_idx);
  return {sequences_.data() + begin, count};
}

int PanelDataset::min_week() const {
  if (sequences_.empty()) throw DataError("empty dataset has no week range");
  int w = sequences_[0].week_index;
  for (const auto& s : sequences_) w = std::min(w, s.week_index);
  return w;
}

int PanelDataset::max_week() const {
  if (sequences_.empty()) throw DataError("empty dataset has no week range");
  int w = sequences_[0].week_index;
  for (const auto& s : sequences_) w = std::max(w, s.week_index);
  return w;
}

namespace {

struct EventRow {
  std::string subject;
  int week = 0;
  int position = 0;
  std::int32_t token_id = 0;
  std::size_t line = 0;
};

[[noreturn]] void row_error(std::size_t line, const std::string& what) {
  throw DataError("line " + std::to_string(line) + ": " + what);
}

PanelDataset build_from_rows(Vocab vocab, std::vector<EventRow> rows) {
  if (rows.empty()) throw DataError("no records");

  std::sort(rows.begin(), rows.end(), [](const EventRow& a, const EventRow& b) {
    if (a.subject != b.subject) return a.subject < b.subject;
    if (a.week != b.week) return a.week < b.week;
    return a.position < b.position;
  });

  std::vector<WeekSequence> sequences;
  std::size_t i = 0;
  while (i < rows.size()) {
    std::size_t j = i;
    while (j < rows.size() && rows[j].subject == rows[i].subject &&
           rows[j].week == rows[i].week) {
      ++j;
    }
    WeekSequence seq;
    seq.subject_id = rows[i].subject;
    seq.week_index = rows[i].week;
    seq.tokens.reserve(j - i);
    for (std::size_t k = i; k < j; ++k) {
      const int expected = static_cast<int>(k - i);
      if (rows[k].position != expected) {
        if (k > i && rows[k].position == rows[k - 1].position) {
          row_error(rows[k].line, "duplicate (subject, week, position)");
        }
        row_error(rows[k].line, "non-contiguous position " +
                                    std::to_string(rows[k].position) +
                                    " (expected " + std::to_string(expected) +
                                    ")");
      }
      seq.tokens.push_back(rows[k].token_id);
    }
    sequences.push_back(std::move(seq));
    i = j;
  }
  return PanelDataset::from_sequences(std::move(vocab), std::move(sequences));
}

PanelDataset load_jsonl(std::istream& in) {
  Vocab vocab;
  std::vector<EventRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      row_error(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) row_error(line_no, "expected a JSON object");
    for (const char* key : {"s", "w", "p", "t"}) {
      if (!obj.contains(key)) {
        row_error(line_no, std::string("missing field \"") + key + "\"");
      }
    }
    EventRow row;
    row.line = line_no;
    if (!obj["s"].is_string()) row_error(line_no, "field \"s\" must be a string");
    if (!obj["t"].is_string()) row_error(line_no, "field \"t\" must be a string");
    if (!obj["w"].is_number_integer() || !obj["p"].is_number_integer()) {
      row_error(line_no, "fields \"w\" and \"p\" must be integers");
    }
    row.subject = obj["s"].get<std::string>();
    row.week = obj["w"].get<int>();
    row.position = obj["p"].get<int>();
    if (row.subject.empty()) row_error(line_no, "empty subject id");
    if (row.position < 0) row_error(line_no, "negative position");
    row.token_id = vocab.add(obj["t"].get<std::string>());
    rows.push_back(std::move(row));
  }
  return build_from_rows(std::move(vocab), std::move(rows));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

int parse_int_field(const std::string& s, std::size_t line_no,
                    const char* name) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    row_error(line_no, std::string("invalid ") + name + " value: \"" + s + "\"");
  }
}

PanelDataset load_csv(std::istream& in) {
  Vocab vocab;
  std::vector<EventRow> rows;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw DataError("no records");
  ++line_no;
  if (split_csv_line(line) !=
      std::vector<std::string>{"subject", "week", "position", "token"}) {
    row_error(1, "expected header subject,week,position,token");
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 4) row_error(line_no, "expected 4 fields");
    EventRow row;
    row.line = line_no;
    row.subject = fields[0];
    if (row.subject.empty()) row_error(line_no, "empty subject id");
    row.week = parse_int_field(fields[1], line_no, "week");
    row.position = parse_int_field(fields[2], line_no, "position");
    if (row.position < 0) row_error(line_no, "negative position");
    row.token_id = vocab.add(fields[3]);
    rows.push_back(std::move(row));
  }
  return build_from_rows(std::move(vocab), std::move(rows));
}

std::string anonymous_id(std::size_t index, std::size_t total) {
  int width = 1;
  for (std::size_t n = total > 0 ? total - 1 : 0; n >= 10; n /= 10) ++width;
  width = std::max(width, 4);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "a%0*zu", width, index);
  return buf;
}

}  // namespace

PanelDataset load_panel(const std::string& path, FileFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return format == FileFormat::jsonl ? load_jsonl(in) : load_csv(in);
}

void save_panel(const PanelDataset& data, const std::string& path,
                FileFormat format, bool anonymize) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open file for writing: " + path);

  std::unordered_map<std::string, std::string> alias;
  if (anonymize) {
    for (std::size_t i = 0; i < data.subjects().size(); ++i) {
      alias.emplace(data.subjects()[i], anonymous_id(i, data.n_subjects()));
    }
  }

  if (format == FileFormat::csv) out << "subject,week,position,token\n";
  for (const WeekSequence& seq : data.sequences()) {
    const std::string& sid =
        anonymize ? alias.at(seq.subject_id) : seq.subject_id;
    for (std::size_t p = 0; p < seq.tokens.size(); ++p) {
      const std::string& tok = data.vocab().token(seq.tokens[p]);
      if (format == FileFormat::jsonl) {
        out << "{\"s\":" << json_quote(sid) << ",\"w\":" << seq.week_index
            << ",\"p\":" << p << ",\"t\":" << json_quote(tok) << "}\n";
      } else {
        if (tok.find_first_of(",\n\"") != std::string::npos ||
            sid.find_first_of(",\n\"") != std::string::npos) {
          throw DataError("CSV export does not support quoting; token or "
                          "subject contains ',', '\"' or newline");
        }
        out << sid << ',' << seq.week_index << ',' << p << ',' << tok << '\n';
      }
    }
  }
  if (!out) throw DataError("write failed: " + path);
}

FileFormat format_from_path(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) {
    return FileFormat::csv;
  }
  return FileFormat::jsonl;
}

PeriodSplit split_periods(const PanelDataset& data, int boundary) {
  if (data.sequences().empty()) throw ValidationError("empty dataset");
  if (boundary <= data.min_week() || boundary > data.max_week()) {
    throw ValidationError(
        "period boundary " + std::to_string(boundary) +
        " not strictly inside week range [" + std::to_string(data.min_week()) +
        ", " + std::to_string(data.max_week()) + "]");
  }
  std::vector<WeekSequence> released, auxiliary;
  for (const WeekSequence& seq : data.sequences()) {
    (seq.week_index < boundary ? released : auxiliary).push_back(seq);
  }
  PeriodSplit split;
  split.released =
      PanelDataset::from_sequences(data.vocab(), std::move(released));
  split.auxiliary =
      PanelDataset::from_sequences(data.vocab(), std::move(auxiliary));
  split.released.set_period_boundary(boundary);
  split.auxiliary.set_period_boundary(boundary);
  for (const auto& id : split.released.subjects()) {
    if (!split.auxiliary.subject_index(id)) split.released_only.push_back(id);
  }
  for (const auto& id : split.auxiliary.subjects()) {
    if (!split.released.subject_index(id)) split.auxiliary_only.push_back(id);
  }
  return split;
}

PanelDataset merge_panels(const PanelDataset& a, const PanelDataset& b) {
  if (!(a.vocab() == b.vocab())) {
    throw ValidationError("merge_panels requires identical vocabs");
  }
  std::vector<WeekSequence> sequences = a.sequences();
  sequences.insert(sequences.end(), b.sequences().begin(),
                   b.sequences().end());
  return PanelDataset::from_sequences(a.vocab(), std::move(sequences));
}

std::pair<PanelDataset, PanelDataset> split_train_holdout(
    const PanelDataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ValidationError("fraction must be in (0, 1), got " +
                          std::to_string(fraction));
  }
  const std::size_t n = data.n_subjects();
  if (n < 2) throw ValidationError("need at least 2 subjects to split");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  auto n_train = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * fraction));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

  std::vector<WeekSequence> train, holdout;
  for (std::size_t s = 0; s < n; ++s) {
    const auto weeks = data.subject_weeks(s);
    auto& dst = in_train[s] ? train : holdout;
    dst.insert(dst.end(), weeks.begin(), weeks.end());
  }
  return {PanelDataset::from_sequences(data.vocab(), std::move(train)),
          PanelDataset::from_sequences(data.vocab(), std::move(holdout))};
}

PanelDataset perturb(const PanelDataset& data, const PerturbSpec& spec) {
  if (spec.flip_rate < 0.0 || spec.flip_rate > 1.0) {
    throw ValidationError("flip_rate must be in [0, 1], got " +
                          std::to_string(spec.flip_rate));
  }
  if (spec.flip_rate > 0.0 && data.n_subjects() < 2) {
    throw ValidationError("no donor subjects");
  }

  // Pooled events grouped by subject, with offsets, so a draw can skip the
  // receiving subject's own events in O(1).
  std::vector<std::int32_t> pool;
  pool.reserve(data.n_events());
  std::vector<std::size_t> offset(data.n_subjects() + 1, 0);
  for (std::size_t s = 0; s < data.n_subjects(); ++s) {
    offset[s] = pool.size();
    for (const WeekSequence& seq : data.subject_weeks(s)) {
      pool.insert(pool.end(), seq.tokens.begin(), seq.tokens.end());
    }
  }
  offset[data.n_subjects()] = pool.size();

  Rng rng(spec.seed);
  std::vector<WeekSequence> sequences = data.sequences();
  for (WeekSequence& seq : sequences) {
    const std::size_t s = *data.subject_index(seq.subject_id);
    const std::size_t own = offset[s + 1] - offset[s];
    const std::size_t donors = pool.size() - own;
    for (std::int32_t& token : seq.tokens) {
      if (rng.uniform() < spec.flip_rate) {
        std::size_t r = rng.below(donors);
        if (r >= offset[s]) r += own;
        token = pool[r];
      }
    }
  }
  return PanelDataset::from_sequences(data.vocab(), std::move(sequences));
}

}  // namespace reid
