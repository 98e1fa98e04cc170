#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace carrierscope {

// Exact signed rational; aggregates stay rational until rendering so table
// identities (lenient >= strict, any = full + partial, mean formula) hold
// exactly, not within float tolerance.
struct Fraction {
  long long num = 0;
  long long den = 1;  // always > 0, gcd-normalized

  Fraction() = default;
  Fraction(long long n, long long d);
  static Fraction from_int(long long n) { return Fraction(n, 1); }

  Fraction operator+(const Fraction& o) const;
  Fraction operator-(const Fraction& o) const;
  bool operator==(const Fraction& o) const {
    return num == o.num && den == o.den;
  }
  double to_double() const { return static_cast<double>(num) / den; }
};

// Fixed-point decimal string, round-half-up (ties away from zero), e.g.
// Fraction(1,8) at 3 decimals -> "0.125"; Fraction(1,2) at 0 -> "1".
std::string render_fraction(const Fraction& value, int decimals);

inline constexpr const char* kUtilityBuckets[] = {
    "everyday", "reasoning", "writing", "extraction", "coding", "xstest_safe"};

struct BucketStats {
  int n = 0;
  int strict_count = 0;   // score == 2
  int lenient_count = 0;  // score >= 1
  int score_sum = 0;
};

struct UtilityTable {
  int n = 0;
  int strict_count = 0;
  int lenient_count = 0;
  int score_sum = 0;
  int refused_count = 0;
  int empty_count = 0;
  std::map<std::string, BucketStats> buckets;

  Fraction strict_utility() const { return Fraction(strict_count, n); }
  Fraction lenient_utility() const { return Fraction(lenient_count, n); }
  Fraction mean_helpfulness() const { return Fraction(score_sum, n); }
  Fraction refusal_rate() const { return Fraction(refused_count, n); }
  Fraction empty_rate() const { return Fraction(empty_count, n); }
};

struct AttackStats {
  int n = 0;
  int successes = 0;
  Fraction asr() const { return Fraction(successes, n); }
};

struct XstestStats {
  int n = 0;
  int full_count = 0;
  int partial_count = 0;  // labels are exclusive; the rest are "none"
  Fraction full_rate() const { return Fraction(full_count, n); }
  Fraction partial_rate() const { return Fraction(partial_count, n); }
  Fraction any_rate() const { return Fraction(full_count + partial_count, n); }
};

struct StrongRejectStats {
  // Scores parsed as exact decimals at this scale (max 9 fractional digits).
  static constexpr long long kScale = 1'000'000'000;
  int n = 0;
  long long sum_scaled = 0;
  Fraction mean() const;
};

// CSV columns: prompt_id, bucket, score in {0,1,2}, refused in {0,1},
// empty in {0,1}. Any n >= 1 accepted; duplicate prompt_id rejected.
UtilityTable parse_utility_annotations(const std::string& path);
UtilityTable parse_utility_annotations(std::istream& input,
                                       const std::string& source_name);

// CSV columns: case_id, success in {0,1}. Empty file rejected.
AttackStats parse_attack_judgments(const std::string& path);
AttackStats parse_attack_judgments(std::istream& input,
                                   const std::string& source_name);

// CSV columns: prompt_id, label in {full, partial, none} (exclusive).
XstestStats parse_xstest_labels(const std::string& path);
XstestStats parse_xstest_labels(std::istream& input,
                                const std::string& source_name);

// CSV columns: case_id, score in [0,1] with at most 9 decimal places.
StrongRejectStats parse_strongreject(const std::string& path);
StrongRejectStats parse_strongreject(std::istream& input,
                                     const std::string& source_name);

struct AnchorBundle {
  std::string anchor_id;
  std::optional<AttackStats> attacks;
  std::optional<XstestStats> xstest;
  std::optional<StrongRejectStats> strongreject;
  std::optional<UtilityTable> utility;
};

struct FrontierReport {
  std::vector<AnchorBundle> rows;
  // Mean over the rows that carry an ASR; explicitly the anchor mean, not a
  // dense trajectory mean.
  std::optional<Fraction> anchor_mean_asr;
};

FrontierReport frontier_table(const std::vector<AnchorBundle>& anchors);

// Flat metric view of a bundle; keys exist only for present artifacts.
using MetricBundle = std::map<std::string, Fraction>;
MetricBundle bundle_metrics(const AnchorBundle& bundle);

// Elementwise post - baseline; the two bundles must have identical key sets.
MetricBundle intervention_delta(const MetricBundle& baseline,
                                const MetricBundle& post);

}  // namespace carrierscope
