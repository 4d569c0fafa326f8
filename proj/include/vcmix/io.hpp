#pragma once
// Tab-delimited cohort tables, sidecar files, flat key-value documents and
// staged (all-or-nothing) output writing.
//
// Cohort input is long format with a header row:
//   person_id  time_index  clone_id  count
// Person-time offsets are the column sums of the full table, computed before
// any clone filtering, unless an offsets sidecar supplies them:
//   person_id  time_index  total

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <tuple>
#include <utility>
#include <vector>

#include "vcmix/classify.hpp"
#include "vcmix/em.hpp"
#include "vcmix/error.hpp"
#include "vcmix/model_core.hpp"
#include "vcmix/simulator.hpp"

namespace vcmix::io {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- formatting

/// Shortest decimal string that reads back to the same double.
inline std::string format_double(double x) {
  if (std::isnan(x))
    return "nan";
  if (std::isinf(x))
    return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string format_optional(const std::optional<double> &x) {
  return x ? format_double(*x) : "NA";
}

// ------------------------------------------------------------------- parsing

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos)
    return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  s = trim(s);
  T v{};
  if (s.empty())
    return std::nullopt;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    return std::nullopt;
  return v;
}

inline std::uint64_t parse_count(std::string_view field, const std::string &where,
                                 std::size_t line, const char *what) {
  const auto t = trim(field);
  if (!t.empty() && t.front() == '-')
    throw ParseError(where, line, std::string("negative ") + what + " '" +
                                      std::string(t) + "'");
  const auto v = parse_number<std::uint64_t>(t);
  if (!v)
    throw ParseError(where, line, std::string("invalid ") + what + " '" +
                                      std::string(t) + "'");
  return *v;
}

/// A parsed tab-delimited file with a header row.
struct Table {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  std::size_t column(const std::string &name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw ParseError(path, 1, "missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline Table read_table(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  Table t;
  t.path = path.string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (trim(line).empty())
      continue;
    auto fields = split_tabs(line);
    if (t.header.empty()) {
      for (auto f : fields)
        t.header.emplace_back(trim(f));
      continue;
    }
    if (fields.size() != t.header.size())
      throw ParseError(t.path, lineno,
                       "expected " + std::to_string(t.header.size()) +
                           " fields, found " + std::to_string(fields.size()));
    std::vector<std::string> row;
    row.reserve(fields.size());
    for (auto f : fields)
      row.emplace_back(trim(f));
    t.rows.push_back(std::move(row));
    t.line_numbers.push_back(lineno);
  }
  if (in.bad())
    throw IoError("read error on " + path.string());
  if (t.header.empty())
    throw InvalidInput(t.path + ": empty input");
  return t;
}

// -------------------------------------------------------------- cohort table

struct CohortRow {
  std::string person_id;
  std::uint32_t time_index = 0;
  std::string clone_id;
  Count count = 0;
};

using PersonTime = std::pair<std::string, std::uint32_t>;

struct CohortTable {
  std::vector<CohortRow> rows;
  std::map<PersonTime, Count> offsets;
  Strata strata;
};

inline std::map<PersonTime, Count> read_offsets(const fs::path &path) {
  const Table t = read_table(path);
  const auto cp = t.column("person_id"), ct = t.column("time_index"),
             co = t.column("total");
  std::map<PersonTime, Count> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto &r = t.rows[i];
    const auto line = t.line_numbers[i];
    const auto time = parse_number<std::uint32_t>(r[ct]);
    if (!time)
      throw ParseError(t.path, line, "invalid time_index '" + r[ct] + "'");
    const Count total = parse_count(r[co], t.path, line, "total");
    if (total == 0)
      throw ParseError(t.path, line, "offset total must be positive");
    if (!out.emplace(PersonTime{r[cp], *time}, total).second)
      throw InvalidInput(t.path + ":" + std::to_string(line) +
                         ": duplicate person-time");
  }
  return out;
}

inline Strata read_strata(const fs::path &path) {
  const Table t = read_table(path);
  const auto cp = t.column("person_id"), cs = t.column("stratum");
  Strata out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto v = parse_number<int>(t.rows[i][cs]);
    if (!v || (*v != 0 && *v != 1))
      throw ParseError(t.path, t.line_numbers[i], "stratum must be 0 or 1");
    if (!out.emplace(t.rows[i][cp], *v).second)
      throw InvalidInput(t.path + ":" + std::to_string(t.line_numbers[i]) +
                         ": duplicate person");
  }
  return out;
}

struct IngestOptions {
  std::optional<fs::path> offsets_path;
  std::optional<fs::path> strata_path;
};

inline CohortTable ingest(const fs::path &path, const IngestOptions &opts = {}) {
  const Table t = read_table(path);
  if (t.rows.empty())
    throw InvalidInput(t.path + ": empty input");
  const auto cp = t.column("person_id"), ct = t.column("time_index"),
             cc = t.column("clone_id"), cn = t.column("count");

  CohortTable out;
  out.rows.reserve(t.rows.size());
  std::set<std::tuple<std::string, std::uint32_t, std::string>> seen;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto &r = t.rows[i];
    const auto line = t.line_numbers[i];
    if (r[cp].empty() || r[cc].empty())
      throw ParseError(t.path, line, "empty identifier");
    const auto time = parse_number<std::uint32_t>(r[ct]);
    if (!time)
      throw ParseError(t.path, line, "invalid time_index '" + r[ct] + "'");
    CohortRow row{r[cp], *time, r[cc], parse_count(r[cn], t.path, line, "count")};
    if (!seen.emplace(row.person_id, row.time_index, row.clone_id).second)
      throw InvalidInput(t.path + ":" + std::to_string(line) + ": duplicate key (" +
                         row.person_id + ", " + r[ct] + ", " + row.clone_id + ")");
    out.offsets[{row.person_id, row.time_index}] += row.count;
    out.rows.push_back(std::move(row));
  }

  if (opts.offsets_path) {
    auto given = read_offsets(*opts.offsets_path);
    for (const auto &[pt, derived] : out.offsets) {
      const auto it = given.find(pt);
      if (it == given.end())
        throw InvalidInput("offsets file has no total for (" + pt.first + ", " +
                           std::to_string(pt.second) + ")");
    }
    out.offsets = std::move(given);
  }
  for (const auto &[pt, total] : out.offsets)
    if (total == 0)
      throw InvalidInput("person-time (" + pt.first + ", " +
                         std::to_string(pt.second) + ") has zero total reads");
  if (opts.strata_path)
    out.strata = read_strata(*opts.strata_path);
  return out;
}

/// Assembles per-clone series and keeps clones with at least min_total_reads
/// template reads over their observed times. With absent_as_zero, a clone
/// gets a zero count at every sampled time of its person where it has no row.
inline std::vector<CloneSeries> filter_clones(const CohortTable &table,
                                              std::uint64_t min_total_reads,
                                              bool absent_as_zero = true) {
  std::map<std::string, std::vector<std::uint32_t>> sampled;
  for (const auto &[pt, _] : table.offsets)
    sampled[pt.first].push_back(pt.second);

  std::map<CloneKey, std::map<std::uint32_t, Count>> grouped;
  for (const auto &r : table.rows)
    grouped[{r.person_id, r.clone_id}][r.time_index] = r.count;

  std::vector<CloneSeries> out;
  for (auto &[key, by_time] : grouped) {
    if (absent_as_zero)
      for (auto t : sampled[key.first])
        by_time.try_emplace(t, 0);
    CloneSeries s;
    s.person_id = key.first;
    s.clone_id = key.second;
    std::uint64_t total = 0;
    for (const auto &[time, count] : by_time) {
      const auto off = table.offsets.find({key.first, time});
      if (off == table.offsets.end())
        throw InvalidInput("no offset for (" + key.first + ", " +
                           std::to_string(time) + ")");
      s.times.push_back(time);
      s.counts.push_back(count);
      s.offsets.push_back(off->second);
      total += count;
    }
    if (total < min_total_reads)
      continue;
    validate(s);
    out.push_back(std::move(s));
  }
  return out;
}

// ------------------------------------------------------------------ emitting

struct CohortText {
  std::string cohort;
  std::string offsets;
};

/// Long-format rows plus an offsets sidecar for a set of clone series, sorted
/// by (person_id, time_index, clone_id).
inline CohortText emit_cohort(std::span<const CloneSeries> clones) {
  std::vector<std::tuple<std::string, std::uint32_t, std::string, Count>> rows;
  std::map<PersonTime, Count> offsets;
  for (const auto &s : clones) {
    validate(s);
    for (std::size_t k = 0; k < s.size(); ++k) {
      const PersonTime pt{s.person_id, s.time_at(k)};
      const auto [it, fresh] = offsets.emplace(pt, s.offsets[k]);
      if (!fresh && it->second != s.offsets[k])
        throw InvalidInput("inconsistent offsets for (" + pt.first + ", " +
                           std::to_string(pt.second) + ")");
      rows.emplace_back(s.person_id, s.time_at(k), s.clone_id, s.counts[k]);
    }
  }
  std::sort(rows.begin(), rows.end());
  std::ostringstream cohort;
  cohort << "person_id\ttime_index\tclone_id\tcount\n";
  for (const auto &[p, t, c, n] : rows)
    cohort << p << '\t' << t << '\t' << c << '\t' << n << '\n';
  std::ostringstream off;
  off << "person_id\ttime_index\ttotal\n";
  for (const auto &[pt, total] : offsets)
    off << pt.first << '\t' << pt.second << '\t' << total << '\n';
  return {cohort.str(), off.str()};
}

inline std::string emit_truth(const SimTruth &truth) {
  std::ostringstream os;
  os << "person_id\tclone_id\tdynamic\n";
  for (std::size_t i = 0; i < truth.keys.size(); ++i)
    os << truth.keys[i].person_id << '\t' << truth.keys[i].clone_id << '\t'
       << (truth.labels[i] ? 1 : 0) << '\n';
  return os.str();
}

inline SimTruth read_truth(const fs::path &path) {
  const Table t = read_table(path);
  const auto cp = t.column("person_id"), cc = t.column("clone_id"),
             cd = t.column("dynamic");
  SimTruth truth;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto v = parse_number<int>(t.rows[i][cd]);
    if (!v || (*v != 0 && *v != 1))
      throw ParseError(t.path, t.line_numbers[i], "dynamic must be 0 or 1");
    truth.keys.push_back({t.rows[i][cp], t.rows[i][cc]});
    truth.labels.push_back(*v == 1);
  }
  return truth;
}

inline std::string emit_responsibilities(std::span<const CloneResponsibility> rs) {
  std::ostringstream os;
  os << "person_id\tclone_id\tn_times\tprob_dynamic\tsingle_timepoint\n";
  for (const auto &r : rs)
    os << r.person_id << '\t' << r.clone_id << '\t' << r.n_times << '\t'
       << format_double(r.prob_dynamic) << '\t' << (r.n_times == 1 ? 1 : 0) << '\n';
  return os.str();
}

inline std::vector<CloneResponsibility> read_responsibilities(const fs::path &path) {
  const Table t = read_table(path);
  const auto cp = t.column("person_id"), cc = t.column("clone_id"),
             cn = t.column("n_times"), cr = t.column("prob_dynamic");
  std::vector<CloneResponsibility> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto &r = t.rows[i];
    const auto n = parse_number<std::size_t>(r[cn]);
    const auto p = parse_number<double>(r[cr]);
    if (!n || !p || !(*p >= 0.0 && *p <= 1.0))
      throw ParseError(t.path, t.line_numbers[i], "invalid responsibility row");
    out.push_back({r[cp], r[cc], *n, *p});
  }
  return out;
}

inline double mean_proportion(const CloneSeries &s) {
  double m = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k)
    m += static_cast<double>(s.counts[k]) / static_cast<double>(s.offsets[k]);
  return m / static_cast<double>(s.size());
}

inline std::string emit_calls(std::span<const CloneCall> calls) {
  std::ostringstream os;
  os << "person_id\tclone_id\tprob_dynamic\tcall\tdirection\n";
  for (const auto &c : calls)
    os << c.person_id << '\t' << c.clone_id << '\t' << format_double(c.prob_dynamic)
       << '\t' << to_string(c.call) << '\t' << to_string(c.direction) << '\n';
  return os.str();
}

inline std::vector<CloneCall> read_calls(const fs::path &path) {
  const Table t = read_table(path);
  const auto cp = t.column("person_id"), cc = t.column("clone_id"),
             cr = t.column("prob_dynamic"), ck = t.column("call"),
             cd = t.column("direction");
  std::vector<CloneCall> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto &r = t.rows[i];
    const auto line = t.line_numbers[i];
    CloneCall c;
    c.person_id = r[cp];
    c.clone_id = r[cc];
    const auto p = parse_number<double>(r[cr]);
    if (!p)
      throw ParseError(t.path, line, "invalid prob_dynamic");
    c.prob_dynamic = *p;
    if (r[ck] == "dynamic")
      c.call = Call::Dynamic;
    else if (r[ck] != "static")
      throw ParseError(t.path, line, "call must be 'dynamic' or 'static'");
    if (r[cd] == "expanding")
      c.direction = Direction::Expanding;
    else if (r[cd] == "contracting")
      c.direction = Direction::Contracting;
    else if (r[cd] != "na")
      throw ParseError(t.path, line, "unknown direction '" + r[cd] + "'");
    if ((c.call == Call::Dynamic) != (c.direction != Direction::NotApplicable))
      throw ParseError(t.path, line, "direction inconsistent with call");
    out.push_back(std::move(c));
  }
  return out;
}

inline std::string
emit_person_summary(const std::map<std::string, PersonDynamicCounts> &counts,
                    const Strata &strata) {
  std::ostringstream os;
  os << "person_id\tstratum\tn_clones\tn_dynamic\tn_expanding\tn_contracting\n";
  for (const auto &[person, c] : counts) {
    const auto it = strata.find(person);
    os << person << '\t' << (it == strata.end() ? std::string("NA")
                                                : std::to_string(it->second))
       << '\t' << c.n_clones << '\t' << c.n_dynamic << '\t' << c.n_expanding << '\t'
       << c.n_contracting << '\n';
  }
  return os.str();
}

// ----------------------------------------------------- key-value documents

using KeyValues = std::map<std::string, std::string>;

/// `key = value` lines; '#' starts a comment.
inline KeyValues parse_key_values(std::string_view text, const std::string &where) {
  KeyValues kv;
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos)
      end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ParseError(where, lineno, "expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty())
      throw ParseError(where, lineno, "empty key");
    if (!kv.emplace(key, value).second)
      throw ParseError(where, lineno, "duplicate key '" + key + "'");
  }
  return kv;
}

inline KeyValues read_key_values(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

inline std::string emit_key_values(const std::vector<std::pair<std::string, std::string>> &kv) {
  std::ostringstream os;
  for (const auto &[k, v] : kv)
    os << k << " = " << v << '\n';
  return os.str();
}

// ---------------------------------------------------------- staged outputs

/// Writes each file to a temporary sibling and renames all of them into place
/// on commit(). Uncommitted temporaries are removed on destruction.
class StagedOutputs {
public:
  explicit StagedOutputs(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec)
      throw IoError("cannot create output directory " + dir_.string() + ": " +
                    ec.message());
  }
  StagedOutputs(const StagedOutputs &) = delete;
  StagedOutputs &operator=(const StagedOutputs &) = delete;

  ~StagedOutputs() {
    for (const auto &[tmp, _] : staged_) {
      std::error_code ec;
      fs::remove(tmp, ec);
    }
  }

  void add(const std::string &name, const std::string &content) {
    const fs::path final_path = dir_ / name;
    const fs::path tmp = dir_ / ("." + name + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out)
        throw IoError("cannot write " + tmp.string());
      out << content;
      out.flush();
      if (!out)
        throw IoError("write failed for " + tmp.string());
    }
    staged_.emplace_back(tmp, final_path);
  }

  std::vector<fs::path> commit() {
    std::vector<fs::path> written;
    for (const auto &[tmp, final_path] : staged_) {
      std::error_code ec;
      fs::rename(tmp, final_path, ec);
      if (ec)
        throw IoError("cannot move " + tmp.string() + " to " + final_path.string() +
                      ": " + ec.message());
      written.push_back(final_path);
    }
    staged_.clear();
    return written;
  }

private:
  fs::path dir_;
  std::vector<std::pair<fs::path, fs::path>> staged_;
};

} // namespace vcmix::io
