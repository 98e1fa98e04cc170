#include "carrierscope/behavior.hpp"

#include "carrierscope/errors.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

namespace carrierscope {

namespace {

long long checked_narrow(__int128 v, const char* what) {
  if (v > std::numeric_limits<long long>::max() ||
      v < std::numeric_limits<long long>::min()) {
    throw ValidationError(std::string("behavior: ") + what + " overflow");
  }
  return static_cast<long long>(v);
}

}  // namespace

Fraction::Fraction(long long n, long long d) {
  if (d == 0) throw ValidationError("behavior: zero denominator");
  if (d < 0) {
    n = -n;
    d = -d;
  }
  const long long g = std::gcd(n < 0 ? -n : n, d);
  num = g > 0 ? n / g : n;
  den = g > 0 ? d / g : d;
}

Fraction Fraction::operator+(const Fraction& o) const {
  const __int128 n =
      static_cast<__int128>(num) * o.den + static_cast<__int128>(o.num) * den;
  const __int128 d = static_cast<__int128>(den) * o.den;
  return Fraction(checked_narrow(n, "sum"), checked_narrow(d, "sum"));
}

Fraction Fraction::operator-(const Fraction& o) const {
  return *this + Fraction(-o.num, o.den);
}

std::string render_fraction(const Fraction& value, int decimals) {
  if (decimals < 0 || decimals > 12) {
    throw ValidationError("behavior: unsupported decimal width");
  }
  __int128 scale = 1;
  for (int i = 0; i < decimals; ++i) scale *= 10;
  const bool negative = value.num < 0;
  const __int128 mag =
      (negative ? -static_cast<__int128>(value.num) : value.num) * scale;
  __int128 q = mag / value.den;
  const __int128 r = mag % value.den;
  if (2 * r >= value.den) ++q;  // ties away from zero

  std::string digits;
  if (q == 0) digits = "0";
  while (q > 0) {
    digits.push_back(static_cast<char>('0' + static_cast<int>(q % 10)));
    q /= 10;
  }
  std::reverse(digits.begin(), digits.end());
  if (static_cast<int>(digits.size()) <= decimals) {
    digits.insert(0, decimals + 1 - digits.size(), '0');
  }
  std::string out;
  if (negative && digits.find_first_not_of('0') != std::string::npos) {
    out.push_back('-');
  }
  if (decimals == 0) {
    out += digits;
  } else {
    out += digits.substr(0, digits.size() - decimals);
    out.push_back('.');
    out += digits.substr(digits.size() - decimals);
  }
  return out;
}

Fraction StrongRejectStats::mean() const {
  if (n == 0) throw ValidationError("behavior: empty score set");
  const __int128 d = static_cast<__int128>(n) * kScale;
  return Fraction(sum_scaled, checked_narrow(d, "mean"));
}

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string source;
};

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) {
      cell.pop_back();
    }
    std::size_t start = 0;
    while (start < cell.size() && cell[start] == ' ') ++start;
    out.push_back(cell.substr(start));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

CsvTable read_csv(std::istream& input, const std::string& source,
                  const std::vector<std::string>& expected_columns) {
  CsvTable table;
  table.source = source;
  std::string line;
  if (!std::getline(input, line)) {
    throw ValidationError("behavior: " + source + " has no header row");
  }
  table.header = split_line(line);
  const std::set<std::string> have(table.header.begin(), table.header.end());
  const std::set<std::string> want(expected_columns.begin(),
                                   expected_columns.end());
  if (have != want) {
    throw ValidationError("behavior: " + source +
                          " header does not match the expected columns");
  }
  while (std::getline(input, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line);
    if (cells.size() != table.header.size()) {
      throw ValidationError("behavior: " + source + " row has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(cells));
  }
  return table;
}

std::size_t column(const CsvTable& table, const std::string& name) {
  const auto it =
      std::find(table.header.begin(), table.header.end(), name);
  if (it == table.header.end()) {
    throw ValidationError("behavior: " + table.source + " lacks column '" +
                          name + "'");
  }
  return static_cast<std::size_t>(it - table.header.begin());
}

int parse_int(const std::string& text, const CsvTable& table,
              const std::string& what) {
  int value = 0;
  const auto [ptr, ec] =
      std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ValidationError("behavior: " + table.source + " has non-integer " +
                          what + " '" + text + "'");
  }
  return value;
}

// Exact decimal in [0,1] with at most 9 fractional digits, as an integer at
// StrongRejectStats::kScale.
long long parse_unit_decimal(const std::string& text, const CsvTable& table) {
  const auto bad = [&]() -> ValidationError {
    return ValidationError("behavior: " + table.source +
                           " has invalid score '" + text + "'");
  };
  if (text.empty()) throw bad();
  const std::size_t dot = text.find('.');
  const std::string whole = dot == std::string::npos ? text : text.substr(0, dot);
  const std::string frac = dot == std::string::npos ? "" : text.substr(dot + 1);
  if (whole.empty() || frac.size() > 9) throw bad();
  for (char c : whole) {
    if (c < '0' || c > '9') throw bad();
  }
  for (char c : frac) {
    if (c < '0' || c > '9') throw bad();
  }
  long long value = 0;
  for (char c : whole) value = value * 10 + (c - '0');
  if (value > 1) throw bad();
  long long scaled = value * StrongRejectStats::kScale;
  long long place = StrongRejectStats::kScale / 10;
  for (char c : frac) {
    scaled += (c - '0') * place;
    place /= 10;
  }
  if (scaled > StrongRejectStats::kScale) throw bad();  // > 1.0
  return scaled;
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream input(path);
  if (!input) throw IoError("behavior: cannot open " + path);
  return input;
}

}  // namespace

UtilityTable parse_utility_annotations(std::istream& input,
                                       const std::string& source_name) {
  const CsvTable table = read_csv(
      input, source_name, {"prompt_id", "bucket", "score", "refused", "empty"});
  if (table.rows.empty()) {
    throw ValidationError("behavior: " + source_name + " has no rows");
  }
  const std::size_t id_col = column(table, "prompt_id");
  const std::size_t bucket_col = column(table, "bucket");
  const std::size_t score_col = column(table, "score");
  const std::size_t refused_col = column(table, "refused");
  const std::size_t empty_col = column(table, "empty");

  const std::set<std::string> valid_buckets(std::begin(kUtilityBuckets),
                                            std::end(kUtilityBuckets));
  UtilityTable out;
  std::unordered_set<std::string> seen;
  for (const auto& row : table.rows) {
    if (!seen.insert(row[id_col]).second) {
      throw ValidationError("behavior: duplicate prompt_id '" + row[id_col] +
                            "' in " + source_name);
    }
    const std::string& bucket = row[bucket_col];
    if (!valid_buckets.count(bucket)) {
      throw ValidationError("behavior: invalid bucket '" + bucket + "' in " +
                            source_name);
    }
    const int score = parse_int(row[score_col], table, "score");
    if (score < 0 || score > 2) {
      throw ValidationError("behavior: score out of {0,1,2} in " + source_name);
    }
    const int refused = parse_int(row[refused_col], table, "refused flag");
    const int empty = parse_int(row[empty_col], table, "empty flag");
    if ((refused != 0 && refused != 1) || (empty != 0 && empty != 1)) {
      throw ValidationError("behavior: flags must be 0 or 1 in " + source_name);
    }
    ++out.n;
    out.score_sum += score;
    if (score == 2) ++out.strict_count;
    if (score >= 1) ++out.lenient_count;
    out.refused_count += refused;
    out.empty_count += empty;
    BucketStats& b = out.buckets[bucket];
    ++b.n;
    b.score_sum += score;
    if (score == 2) ++b.strict_count;
    if (score >= 1) ++b.lenient_count;
  }
  return out;
}

UtilityTable parse_utility_annotations(const std::string& path) {
  auto input = open_or_throw(path);
  return parse_utility_annotations(input, path);
}

AttackStats parse_attack_judgments(std::istream& input,
                                   const std::string& source_name) {
  const CsvTable table = read_csv(input, source_name, {"case_id", "success"});
  if (table.rows.empty()) {
    throw ValidationError("behavior: " + source_name + " has no rows");
  }
  const std::size_t id_col = column(table, "case_id");
  const std::size_t success_col = column(table, "success");
  AttackStats out;
  std::unordered_set<std::string> seen;
  for (const auto& row : table.rows) {
    if (!seen.insert(row[id_col]).second) {
      throw ValidationError("behavior: duplicate case_id '" + row[id_col] +
                            "' in " + source_name);
    }
    const int success = parse_int(row[success_col], table, "success flag");
    if (success != 0 && success != 1) {
      throw ValidationError("behavior: success must be 0 or 1 in " +
                            source_name);
    }
    ++out.n;
    out.successes += success;
  }
  return out;
}

AttackStats parse_attack_judgments(const std::string& path) {
  auto input = open_or_throw(path);
  return parse_attack_judgments(input, path);
}

XstestStats parse_xstest_labels(std::istream& input,
                                const std::string& source_name) {
  const CsvTable table = read_csv(input, source_name, {"prompt_id", "label"});
  if (table.rows.empty()) {
    throw ValidationError("behavior: " + source_name + " has no rows");
  }
  const std::size_t id_col = column(table, "prompt_id");
  const std::size_t label_col = column(table, "label");
  XstestStats out;
  std::unordered_set<std::string> seen;
  for (const auto& row : table.rows) {
    if (!seen.insert(row[id_col]).second) {
      throw ValidationError("behavior: duplicate prompt_id '" + row[id_col] +
                            "' in " + source_name);
    }
    const std::string& label = row[label_col];
    if (label == "full") {
      ++out.full_count;
    } else if (label == "partial") {
      ++out.partial_count;
    } else if (label != "none") {
      throw ValidationError("behavior: invalid label '" + label + "' in " +
                            source_name);
    }
    ++out.n;
  }
  return out;
}

XstestStats parse_xstest_labels(const std::string& path) {
  auto input = open_or_throw(path);
  return parse_xstest_labels(input, path);
}

StrongRejectStats parse_strongreject(std::istream& input,
                                     const std::string& source_name) {
  const CsvTable table = read_csv(input, source_name, {"case_id", "score"});
  if (table.rows.empty()) {
    throw ValidationError("behavior: " + source_name + " has no rows");
  }
  const std::size_t id_col = column(table, "case_id");
  const std::size_t score_col = column(table, "score");
  StrongRejectStats out;
  std::unordered_set<std::string> seen;
  for (const auto& row : table.rows) {
    if (!seen.insert(row[id_col]).second) {
      throw ValidationError("behavior: duplicate case_id '" + row[id_col] +
                            "' in " + source_name);
    }
    out.sum_scaled += parse_unit_decimal(row[score_col], table);
    ++out.n;
  }
  return out;
}

StrongRejectStats parse_strongreject(const std::string& path) {
  auto input = open_or_throw(path);
  return parse_strongreject(input, path);
}

FrontierReport frontier_table(const std::vector<AnchorBundle>& anchors) {
  if (anchors.empty()) {
    throw ValidationError("behavior: frontier needs at least one anchor");
  }
  FrontierReport report;
  report.rows = anchors;
  Fraction sum(0, 1);
  int with_asr = 0;
  for (const AnchorBundle& bundle : anchors) {
    if (bundle.attacks.has_value()) {
      sum = sum + bundle.attacks->asr();
      ++with_asr;
    }
  }
  if (with_asr > 0) {
    report.anchor_mean_asr = Fraction(
        sum.num, checked_narrow(static_cast<__int128>(sum.den) * with_asr,
                                "anchor mean"));
  }
  return report;
}

MetricBundle bundle_metrics(const AnchorBundle& bundle) {
  MetricBundle out;
  if (bundle.attacks) out["harmbench_asr"] = bundle.attacks->asr();
  if (bundle.xstest) {
    out["xstest_full"] = bundle.xstest->full_rate();
    out["xstest_partial"] = bundle.xstest->partial_rate();
    out["xstest_any"] = bundle.xstest->any_rate();
  }
  if (bundle.strongreject) out["strongreject_mean"] = bundle.strongreject->mean();
  if (bundle.utility) {
    out["strict_utility"] = bundle.utility->strict_utility();
    out["lenient_utility"] = bundle.utility->lenient_utility();
    out["mean_helpfulness"] = bundle.utility->mean_helpfulness();
    out["refusal_rate"] = bundle.utility->refusal_rate();
    out["empty_rate"] = bundle.utility->empty_rate();
  }
  return out;
}

MetricBundle intervention_delta(const MetricBundle& baseline,
                                const MetricBundle& post) {
  if (baseline.size() != post.size()) {
    throw ValidationError("behavior: delta bundles have different metrics");
  }
  MetricBundle out;
  auto b = baseline.begin();
  auto p = post.begin();
  for (; b != baseline.end(); ++b, ++p) {
    if (b->first != p->first) {
      throw ValidationError("behavior: delta bundles have different metrics");
    }
    out[b->first] = p->second - b->second;
  }
  return out;
}

}  // namespace carrierscope
