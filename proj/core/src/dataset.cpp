#include "phantom/shadowgen/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "phantom/nanoformer/config.hpp"

namespace phantom::data {

namespace {

constexpr const char* kFormat = "phantom-shadowgen";
constexpr int kFormatVersion = 1;

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace

void DatasetSpec::validate() const {
  if (popularity < 2) throw std::invalid_argument("DatasetSpec: popularity P must be >= 2, got " + std::to_string(popularity));
  if (group_count() == 0) {
    throw std::invalid_argument("DatasetSpec: target_tokens " + std::to_string(target_tokens) +
                                " is below one group of " + std::to_string(kRecordTokens * (popularity + 1)) +
                                " tokens");
  }
  if (vocab_size != 0 && static_cast<std::size_t>(vocab_size) < required_vocab()) {
    throw std::invalid_argument("DatasetSpec: vocab exhausted: " + std::to_string(group_count()) + " groups need " +
                                std::to_string(required_vocab() - model::kReservedIds) + " disjoint entities but vocab " +
                                std::to_string(vocab_size) + " has " +
                                std::to_string(std::max(0, vocab_size - model::kReservedIds)) + " available");
  }
}

std::size_t DatasetSpec::group_count() const {
  if (popularity < 0 || target_tokens <= 0) return 0;
  return static_cast<std::size_t>(target_tokens) / (kRecordTokens * static_cast<std::size_t>(popularity + 1));
}

std::size_t DatasetSpec::required_vocab() const {
  return group_count() * (static_cast<std::size_t>(popularity) + kGroupFixedEntities) + model::kReservedIds;
}

int DatasetSpec::resolved_vocab() const {
  if (vocab_size != 0) return vocab_size;
  return static_cast<int>(std::max<std::size_t>(512, round_up(required_vocab(), 64)));
}

void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = nlohmann::json{{"popularity", s.popularity},
                     {"target_tokens", s.target_tokens},
                     {"vocab_size", s.vocab_size},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
  DatasetSpec d;
  s.popularity = j.value("popularity", d.popularity);
  s.target_tokens = j.value("target_tokens", d.target_tokens);
  s.vocab_size = j.value("vocab_size", d.vocab_size);
  s.seed = j.value("seed", d.seed);
}

std::string to_string(RecordKind k) { return k == RecordKind::dominant ? "dominant" : "subordinate"; }

RecordKind record_kind_from_string(const std::string& s) {
  if (s == "dominant") return RecordKind::dominant;
  if (s == "subordinate") return RecordKind::subordinate;
  throw std::invalid_argument("unknown record kind '" + s + "'");
}

std::array<std::int32_t, kRecordTokens> PromptRecord::sequence() const {
  std::array<std::int32_t, kRecordTokens> s{};
  std::copy(tokens.begin(), tokens.end(), s.begin());
  s.back() = answer;
  return s;
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.vocab_size = spec.resolved_vocab();

  std::vector<std::int32_t> pool(static_cast<std::size_t>(ds.vocab_size - model::kReservedIds));
  std::iota(pool.begin(), pool.end(), model::kReservedIds);
  std::mt19937_64 rng(spec.seed);
  std::shuffle(pool.begin(), pool.end(), rng);

  const std::size_t P = static_cast<std::size_t>(spec.popularity);
  std::size_t next = 0;
  auto take = [&] { return pool[next++]; };
  const std::size_t G = spec.group_count();
  ds.groups.reserve(G);
  ds.records.reserve(G * (P + 1));
  for (std::size_t g = 0; g < G; ++g) {
    KnowledgeGroup kg;
    kg.id = static_cast<int>(g);
    for (auto& b : kg.x_bg) b = take();
    kg.x_dom.resize(P);
    for (auto& x : kg.x_dom) x = take();
    kg.y_dom = take();
    kg.x_sub = take();
    kg.y_sub = take();
    for (auto x : kg.x_dom) {
      PromptRecord r;
      std::copy(kg.x_bg.begin(), kg.x_bg.end(), r.tokens.begin());
      r.tokens.back() = x;
      r.answer = kg.y_dom;
      r.kind = RecordKind::dominant;
      r.group = kg.id;
      ds.records.push_back(r);
    }
    PromptRecord s;
    std::copy(kg.x_bg.begin(), kg.x_bg.end(), s.tokens.begin());
    s.tokens.back() = kg.x_sub;
    s.answer = kg.y_sub;
    s.kind = RecordKind::subordinate;
    s.group = kg.id;
    ds.records.push_back(s);
    ds.groups.push_back(std::move(kg));
  }
  return ds;
}

void validate(const Dataset& ds) {
  auto fail = [](const std::string& m) { throw std::logic_error("dataset invariant: " + m); };
  std::set<std::int32_t> seen;
  for (const auto& g : ds.groups) {
    const std::string gid = "group " + std::to_string(g.id);
    std::vector<std::int32_t> ents(g.x_bg.begin(), g.x_bg.end());
    ents.insert(ents.end(), g.x_dom.begin(), g.x_dom.end());
    ents.insert(ents.end(), {g.y_dom, g.x_sub, g.y_sub});
    for (auto e : ents) {
      if (e < model::kReservedIds || e >= ds.vocab_size) fail(gid + " entity " + std::to_string(e) + " out of range");
      if (!seen.insert(e).second) fail(gid + " reuses entity " + std::to_string(e));
    }
    if (std::find(g.x_dom.begin(), g.x_dom.end(), g.x_sub) != g.x_dom.end()) fail(gid + " x_sub equals an x_dom");
    if (g.y_sub == g.y_dom) fail(gid + " y_sub equals y_dom");
  }
  for (const auto& r : ds.records) {
    if (r.group < 0 || static_cast<std::size_t>(r.group) >= ds.groups.size()) fail("record with unknown group");
    const auto& g = ds.group_of(r);
    if (!std::equal(g.x_bg.begin(), g.x_bg.end(), r.tokens.begin())) fail("record background differs from group");
    if (r.kind == RecordKind::subordinate) {
      if (r.tokens.back() != g.x_sub || r.answer != g.y_sub) fail("subordinate record mismatch");
    } else if (r.answer != g.y_dom ||
               std::find(g.x_dom.begin(), g.x_dom.end(), r.tokens.back()) == g.x_dom.end()) {
      fail("dominant record mismatch");
    }
  }
}

std::string to_jsonl(const Dataset& ds) {
  std::ostringstream os;
  nlohmann::json header{{"format", kFormat},
                        {"version", kFormatVersion},
                        {"spec", ds.spec},
                        {"vocab_size", ds.vocab_size},
                        {"groups", ds.groups.size()},
                        {"records", ds.records.size()}};
  os << header.dump() << '\n';
  for (const auto& r : ds.records) {
    nlohmann::json j{{"group", r.group}, {"kind", to_string(r.kind)}, {"tokens", r.tokens}, {"answer", r.answer}};
    os << j.dump() << '\n';
  }
  return os.str();
}

Dataset from_jsonl(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("dataset: empty file");
  const auto header = nlohmann::json::parse(line);
  if (header.value("format", "") != kFormat) throw std::runtime_error("dataset: not a phantom-shadowgen file");
  if (header.value("version", 0) != kFormatVersion) {
    throw std::runtime_error("dataset: unsupported format version " + header.value("version", nlohmann::json()).dump());
  }
  Dataset ds;
  ds.spec = header.at("spec").get<DatasetSpec>();
  ds.vocab_size = header.at("vocab_size").get<int>();
  ds.groups.resize(header.at("groups").get<std::size_t>());
  for (std::size_t g = 0; g < ds.groups.size(); ++g) ds.groups[g].id = static_cast<int>(g);
  std::vector<bool> has_sub(ds.groups.size(), false);
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    PromptRecord r;
    r.group = j.at("group").get<int>();
    r.kind = record_kind_from_string(j.at("kind").get<std::string>());
    r.tokens = j.at("tokens").get<Prompt>();
    r.answer = j.at("answer").get<std::int32_t>();
    if (r.group < 0 || static_cast<std::size_t>(r.group) >= ds.groups.size()) {
      throw std::runtime_error("dataset line " + std::to_string(lineno) + ": group out of range");
    }
    auto& g = ds.groups[static_cast<std::size_t>(r.group)];
    std::copy(r.tokens.begin(), r.tokens.begin() + kBackgroundLength, g.x_bg.begin());
    if (r.kind == RecordKind::dominant) {
      g.x_dom.push_back(r.tokens.back());
      g.y_dom = r.answer;
    } else {
      g.x_sub = r.tokens.back();
      g.y_sub = r.answer;
      has_sub[static_cast<std::size_t>(r.group)] = true;
    }
    ds.records.push_back(r);
  }
  if (ds.records.size() != header.at("records").get<std::size_t>()) {
    throw std::runtime_error("dataset: header promises " + header.at("records").dump() + " records, file has " +
                             std::to_string(ds.records.size()));
  }
  for (std::size_t g = 0; g < has_sub.size(); ++g)
    if (!has_sub[g]) throw std::runtime_error("dataset: group " + std::to_string(g) + " has no subordinate record");
  validate(ds);
  return ds;
}

void write_jsonl(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  out << to_jsonl(ds);
  if (!out) throw std::runtime_error("write failed for dataset " + path.string());
}

Dataset read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read dataset " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_jsonl(ss.str());
}

EvalSplit sample_eval(const Dataset& ds, std::size_t n_dom, std::size_t n_sub, std::uint64_t seed) {
  if (ds.records.empty()) throw std::invalid_argument("sample_eval: empty dataset");
  std::vector<std::size_t> dom, sub;
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    (ds.records[i].kind == RecordKind::dominant ? dom : sub).push_back(i);
  EvalSplit out;
  out.clamped = n_dom > dom.size() || n_sub > sub.size();
  std::mt19937_64 rng(seed);
  auto pick = [&](std::vector<std::size_t>& idx, std::size_t n, std::vector<PromptRecord>& dst) {
    n = std::min(n, idx.size());
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> u(i, idx.size() - 1);
      std::swap(idx[i], idx[u(rng)]);
      dst.push_back(ds.records[idx[i]]);
    }
  };
  pick(dom, n_dom, out.dominant);
  pick(sub, n_sub, out.subordinate);
  return out;
}

PromptRecord make_corrupt(const PromptRecord& record) {
  if (record.kind != RecordKind::subordinate) {
    throw std::invalid_argument("make_corrupt: record of group " + std::to_string(record.group) + " is dominant");
  }
  PromptRecord r = record;
  r.tokens.back() = model::kPlaceholderId;
  return r;
}

std::vector<std::string> TextTemplateHook::render(const Dataset& ds) const {
  if (!enabled) throw std::logic_error("text template corpus is disabled");
  if (skeletons.empty()) throw std::invalid_argument("text template corpus has no skeletons");
  auto name = [](std::int32_t id) { return "ent" + std::to_string(id); };
  auto fill = [](std::string s, const std::string& key, const std::string& value) {
    for (auto p = s.find(key); p != std::string::npos; p = s.find(key, p + value.size())) s.replace(p, key.size(), value);
    return s;
  };
  std::vector<std::string> out;
  out.reserve(ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    std::string bg;
    for (std::size_t k = 0; k < kBackgroundLength; ++k) bg += (k ? " " : "") + name(r.tokens[k]);
    std::string s = skeletons[i % skeletons.size()];
    s = fill(s, "{bg}", bg);
    s = fill(s, "{subject}", name(r.tokens.back()));
    s = fill(s, "{answer}", name(r.answer));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace phantom::data
