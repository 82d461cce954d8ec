#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace phantom::data {

inline constexpr std::size_t kBackgroundLength = 4;
inline constexpr std::size_t kPromptLength = kBackgroundLength + 1;
inline constexpr std::size_t kRecordTokens = kPromptLength + 1;
/// Distinct entity tokens a group consumes beyond its P dominant subjects:
/// 4 background tokens, y_dom, x_sub, y_sub.
inline constexpr std::size_t kGroupFixedEntities = kBackgroundLength + 3;

struct DatasetSpec {
  /// Dominant records per subordinate record (P >= 2).
  int popularity = 5;
  /// Token budget D; every record costs 6 tokens.
  std::int64_t target_tokens = 2000;
  /// 0 selects the smallest multiple of 64 (at least 512) that holds every
  /// disjoint entity.
  int vocab_size = 0;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on P < 2, D too small for one group, or a
  /// fixed vocab too small for the entities.
  void validate() const;
  std::size_t group_count() const;
  /// Entities plus the reserved PAD and PLACEHOLDER ids.
  std::size_t required_vocab() const;
  int resolved_vocab() const;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

using Background = std::array<std::int32_t, kBackgroundLength>;
using Prompt = std::array<std::int32_t, kPromptLength>;

struct KnowledgeGroup {
  int id = 0;
  Background x_bg{};
  std::vector<std::int32_t> x_dom;
  std::int32_t y_dom = 0;
  std::int32_t x_sub = 0;
  std::int32_t y_sub = 0;

  friend bool operator==(const KnowledgeGroup&, const KnowledgeGroup&) = default;
};

enum class RecordKind { dominant, subordinate };

std::string to_string(RecordKind k);
RecordKind record_kind_from_string(const std::string& s);

struct PromptRecord {
  Prompt tokens{};
  std::int32_t answer = 0;
  RecordKind kind = RecordKind::dominant;
  int group = 0;

  /// Prompt followed by the answer: the 6-token training sequence.
  std::array<std::int32_t, kRecordTokens> sequence() const;

  friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

struct Dataset {
  DatasetSpec spec;
  int vocab_size = 0;
  std::vector<KnowledgeGroup> groups;
  /// Per group: its P dominant records, then its subordinate record.
  std::vector<PromptRecord> records;

  std::size_t token_count() const noexcept { return records.size() * kRecordTokens; }
  const KnowledgeGroup& group_of(const PromptRecord& r) const { return groups.at(static_cast<std::size_t>(r.group)); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Deterministic per spec. Entity ids are drawn without replacement from
/// [2, vocab), so no token is shared between or within groups.
Dataset generate(const DatasetSpec& spec);

/// Throws std::logic_error naming the first violated group or record
/// invariant.
void validate(const Dataset& ds);

/// JSON Lines: a header line with the spec, then one record per line.
std::string to_jsonl(const Dataset& ds);
Dataset from_jsonl(const std::string& text);
void write_jsonl(const std::filesystem::path& path, const Dataset& ds);
Dataset read_jsonl(const std::filesystem::path& path);

struct EvalSplit {
  std::vector<PromptRecord> dominant;
  std::vector<PromptRecord> subordinate;
  /// True when a requested count exceeded the available records.
  bool clamped = false;
};

/// Uniform sample without replacement, deterministic per seed; counts above
/// availability are clamped and flagged. Throws on an empty dataset.
EvalSplit sample_eval(const Dataset& ds, std::size_t n_dom, std::size_t n_sub, std::uint64_t seed);

/// Subordinate record with its subject replaced by the PLACEHOLDER id.
/// Throws std::invalid_argument for dominant records.
PromptRecord make_corrupt(const PromptRecord& record);

/// Natural-language stand-in corpus: fixed phrase skeletons with slotted
/// entity names. Ships disabled; render() throws unless enabled.
struct TextTemplateHook {
  bool enabled = false;
  std::vector<std::string> skeletons{"{bg} {subject} is known for {answer}.",
                                     "Regarding {bg}, {subject} goes with {answer}."};

  std::vector<std::string> render(const Dataset& ds) const;
};

}  // namespace phantom::data
