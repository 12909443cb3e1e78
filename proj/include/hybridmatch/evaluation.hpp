#pragma once

// Expert-study scoring (rating matrix, criterion weights, weighted
// proportions, 5-point Likert score, weight derivation from expert scores)
// and full-reference image metrics (PSNR, SSIM).

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hybridmatch/error.hpp"

namespace hm {

inline constexpr std::size_t kCriteria = 4;
inline constexpr std::size_t kLevels = 5;

inline constexpr std::array<std::string_view, kCriteria> kCriterionNames = {"D1-Style", "D2-Color", "D3-Fabric",
                                                                           "D4-Variety"};
// Columns run VerySatisfied .. VeryDissatisfied, worth 5 .. 1 points.
inline constexpr std::array<std::string_view, kLevels> kLevelNames = {
    "very_satisfied", "satisfied", "average", "dissatisfied", "very_dissatisfied"};
inline constexpr std::array<double, kLevels> kLevelPoints = {5, 4, 3, 2, 1};

using LevelRow = std::array<double, kLevels>;

class RatingMatrix {
 public:
  RatingMatrix() = default;

  explicit RatingMatrix(const std::array<LevelRow, kCriteria>& rows) : rows_(rows) {
    for (std::size_t c = 0; c < kCriteria; ++c) {
      double sum = 0.0;
      for (double v : rows_[c]) {
        if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::InvalidArgument, "rating entries must lie in [0, 1]");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-3)
        throw Error(ErrorKind::NotNormalized, std::string(kCriterionNames[c]) + " row sums to " + std::to_string(sum));
    }
  }

  const LevelRow& row(std::size_t criterion) const { return rows_.at(criterion); }
  double operator()(std::size_t criterion, std::size_t level_col) const { return rows_.at(criterion).at(level_col); }

  bool operator==(const RatingMatrix&) const = default;

 private:
  std::array<LevelRow, kCriteria> rows_{};
};

class WeightVector {
 public:
  WeightVector() : w_{0.25, 0.25, 0.25, 0.25} {}

  explicit WeightVector(const std::array<double, kCriteria>& w) : w_(w) {
    double sum = 0.0;
    for (double v : w_) {
      if (!(v >= 0.0)) throw Error(ErrorKind::InvalidArgument, "weights must be non-negative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw Error(ErrorKind::NotNormalized, "weights sum to " + std::to_string(sum));
  }

  double operator[](std::size_t i) const { return w_.at(i); }
  const std::array<double, kCriteria>& values() const noexcept { return w_; }

  bool operator==(const WeightVector&) const = default;

 private:
  std::array<double, kCriteria> w_;
};

/// The published criterion weights.
inline WeightVector published_weights() { return WeightVector({0.24, 0.25, 0.21, 0.30}); }

/// One rater's levels (1..5) for the four criteria on one evaluated set.
struct LikertBallot {
  std::string rater_id;
  std::array<int, kCriteria> levels{};
};

/// A single (rater, criterion, level) vote, as stored in the ballot CSV.
struct LikertVote {
  std::string rater_id;
  std::size_t criterion = 0;  // 0..3
  int level = 0;              // 1..5
};

inline std::size_t level_column(int level) {
  if (level < 1 || level > 5) throw Error(ErrorKind::InvalidArgument, "Likert level must be 1..5");
  return static_cast<std::size_t>(5 - level);
}

/// Entry (c, l) = fraction of the votes on criterion c that chose level l.
inline RatingMatrix aggregate_votes(const std::vector<LikertVote>& votes) {
  if (votes.empty()) throw Error(ErrorKind::EmptyBallots, "no votes");
  std::array<std::array<std::size_t, kLevels>, kCriteria> counts{};
  std::array<std::size_t, kCriteria> totals{};
  for (const auto& v : votes) {
    if (v.criterion >= kCriteria) throw Error(ErrorKind::InvalidArgument, "criterion index out of range");
    ++counts[v.criterion][level_column(v.level)];
    ++totals[v.criterion];
  }
  std::array<LevelRow, kCriteria> rows{};
  for (std::size_t c = 0; c < kCriteria; ++c) {
    if (totals[c] == 0)
      throw Error(ErrorKind::EmptyBallots, "no votes for " + std::string(kCriterionNames[c]));
    for (std::size_t l = 0; l < kLevels; ++l)
      rows[c][l] = static_cast<double>(counts[c][l]) / static_cast<double>(totals[c]);
  }
  return RatingMatrix(rows);
}

inline RatingMatrix aggregate_ballots(const std::vector<LikertBallot>& ballots) {
  if (ballots.empty()) throw Error(ErrorKind::EmptyBallots, "no ballots");
  std::vector<LikertVote> votes;
  votes.reserve(ballots.size() * kCriteria);
  for (const auto& b : ballots)
    for (std::size_t c = 0; c < kCriteria; ++c) votes.push_back({b.rater_id, c, b.levels[c]});
  return aggregate_votes(votes);
}

/// B = A R.
inline LevelRow weighted_proportions(const RatingMatrix& r, const WeightVector& a) {
  LevelRow b{};
  for (std::size_t l = 0; l < kLevels; ++l)
    for (std::size_t c = 0; c < kCriteria; ++c) b[l] += a[c] * r(c, l);
  return b;
}

/// 5 points for Very Satisfied down to 1 for Very Dissatisfied.
inline double likert_score(const LevelRow& weighted) {
  const double sum = std::accumulate(weighted.begin(), weighted.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-3) throw Error(ErrorKind::NotNormalized, "weighted proportions sum to " + std::to_string(sum));
  double s = 0.0;
  for (std::size_t l = 0; l < kLevels; ++l) s += kLevelPoints[l] * weighted[l];
  return s;
}

/// Criterion totals turned into integer percentages summing to exactly 100 by
/// largest-remainder rounding (ties to the earlier criterion).
/// expert_scores[c] holds every expert's 1..5 score for criterion c.
inline std::array<int, kCriteria> derive_weight_percents(const std::array<std::vector<int>, kCriteria>& expert_scores) {
  const std::size_t experts = expert_scores[0].size();
  if (experts == 0) throw Error(ErrorKind::EmptyScores, "no expert scores");
  std::array<long, kCriteria> totals{};
  for (std::size_t c = 0; c < kCriteria; ++c) {
    if (expert_scores[c].size() != experts)
      throw Error(ErrorKind::InvalidArgument, "every criterion needs one score per expert");
    for (int s : expert_scores[c]) {
      if (s < 1 || s > 5) throw Error(ErrorKind::InvalidArgument, "expert scores must be 1..5");
      totals[c] += s;
    }
  }
  const long sum = std::accumulate(totals.begin(), totals.end(), 0L);
  std::array<int, kCriteria> percent{};
  std::array<long, kCriteria> remainder{};
  int assigned = 0;
  for (std::size_t c = 0; c < kCriteria; ++c) {
    percent[c] = static_cast<int>(100 * totals[c] / sum);
    remainder[c] = 100 * totals[c] % sum;
    assigned += percent[c];
  }
  std::array<std::size_t, kCriteria> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (int i = 0; i < 100 - assigned; ++i) ++percent[order[static_cast<std::size_t>(i)]];
  return percent;
}

inline WeightVector derive_weights(const std::array<std::vector<int>, kCriteria>& expert_scores) {
  const auto percent = derive_weight_percents(expert_scores);
  std::array<double, kCriteria> w{};
  for (std::size_t c = 0; c < kCriteria; ++c) w[c] = percent[c] / 100.0;
  return WeightVector(w);
}

/// The published five-expert weight scoring (rows D1..D4, columns experts 1..5).
inline std::array<std::vector<int>, kCriteria> published_expert_scores() {
  return {{{4, 2, 4, 3, 4}, {4, 3, 4, 3, 4}, {3, 2, 4, 3, 3}, {4, 4, 4, 4, 5}}};
}

struct PublishedStudyRow {
  std::string model;
  RatingMatrix ratings;
  LevelRow weighted;  // as printed
  double score;       // as printed
};

/// Per-criterion proportions, weighted rows and scores of the published
/// expert study, transcribed as printed.
inline std::vector<PublishedStudyRow> published_expert_study() {
  return {
      {"GenMatching",
       RatingMatrix({{{0.070, 0.300, 0.388, 0.182, 0.06},
                      {0.052, 0.176, 0.282, 0.346, 0.144},
                      {0.054, 0.224, 0.344, 0.296, 0.082},
                      {0.048, 0.118, 0.346, 0.292, 0.196}}}),
       {0.056, 0.198, 0.340, 0.280, 0.126},
       2.777},
      {"RetMatching",
       RatingMatrix({{{0.116, 0.41, 0.346, 0.110, 0.018},
                      {0.120, 0.376, 0.330, 0.152, 0.022},
                      {0.086, 0.430, 0.380, 0.098, 0.006},
                      {0.128, 0.400, 0.370, 0.086, 0.016}}}),
       {0.114, 0.403, 0.356, 0.111, 0.016},
       3.489},
      {"GenMatching+",
       RatingMatrix({{{0.100, 0.418, 0.364, 0.112, 0.006},
                      {0.090, 0.348, 0.346, 0.200, 0.016},
                      {0.070, 0.398, 0.440, 0.086, 0.006},
                      {0.076, 0.420, 0.390, 0.106, 0.008}}}),
       {0.084, 0.397, 0.383, 0.127, 0.009},
       3.420},
      {"RetMatching+",
       RatingMatrix({{{0.122, 0.456, 0.314, 0.090, 0.018},
                      {0.118, 0.370, 0.346, 0.128, 0.038},
                      {0.128, 0.460, 0.322, 0.078, 0.012},
                      {0.144, 0.452, 0.310, 0.082, 0.012}}}),
       {0.129, 0.434, 0.322, 0.095, 0.020},
       3.557},
      {"HMaVTON",
       RatingMatrix({{{0.120, 0.476, 0.302, 0.092, 0.010},
                      {0.114, 0.382, 0.35, 0.134, 0.02},
                      {0.132, 0.472, 0.314, 0.074, 0.008},
                      {0.13, 0.464, 0.312, 0.086, 0.008}}}),
       {0.124, 0.448, 0.32, 0.097, 0.012},
       3.578},
  };
}

inline std::size_t parse_criterion(std::string_view s) {
  for (std::size_t c = 0; c < kCriteria; ++c) {
    const auto name = kCriterionNames[c];
    if (s == name || s == name.substr(0, 2)) return c;
    std::string lower(name.substr(3));
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (s == lower) return c;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown criterion '" + std::string(s) + "'");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_number(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::MalformedFile, "not a number: '" + s + "'");
  }
}

}  // namespace detail

/// Ballot CSV: header "rater_id,criterion,level", one vote per row.
inline std::vector<LikertVote> read_votes_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::split_csv_line(line) != std::vector<std::string>{"rater_id", "criterion", "level"})
    throw Error(ErrorKind::MalformedFile, "ballot CSV must start with header rater_id,criterion,level");
  std::vector<LikertVote> votes;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 3) throw Error(ErrorKind::MalformedFile, "ballot row needs 3 cells: " + line);
    const double level = detail::parse_number(cells[2]);
    if (level != std::floor(level)) throw Error(ErrorKind::MalformedFile, "level must be an integer");
    votes.push_back({cells[0], parse_criterion(cells[1]), static_cast<int>(level)});
  }
  return votes;
}

/// Rating-matrix CSV: header "criterion,very_satisfied,...,very_dissatisfied"
/// then four rows D1..D4.
inline RatingMatrix read_rating_matrix_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::split_csv_line(line).size() != kLevels + 1)
    throw Error(ErrorKind::MalformedFile, "rating matrix CSV needs a 6-column header");
  std::array<LevelRow, kCriteria> rows{};
  std::array<bool, kCriteria> seen{};
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != kLevels + 1) throw Error(ErrorKind::MalformedFile, "rating row needs 6 cells: " + line);
    const std::size_t c = parse_criterion(cells[0]);
    if (seen[c]) throw Error(ErrorKind::MalformedFile, "duplicate criterion row");
    seen[c] = true;
    for (std::size_t l = 0; l < kLevels; ++l) rows[c][l] = detail::parse_number(cells[l + 1]);
  }
  for (bool s : seen)
    if (!s) throw Error(ErrorKind::MalformedFile, "rating matrix CSV needs all four criteria");
  return RatingMatrix(rows);
}

inline std::string rating_matrix_csv(const RatingMatrix& r) {
  std::string out = "criterion";
  for (auto name : kLevelNames) out += "," + std::string(name);
  out += "\n";
  char buf[32];
  for (std::size_t c = 0; c < kCriteria; ++c) {
    out += kCriterionNames[c];
    for (std::size_t l = 0; l < kLevels; ++l) {
      std::snprintf(buf, sizeof buf, ",%.6f", r(c, l));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

/// Expert-score CSV: header "criterion,<expert ids...>", rows D1..D4 of 1..5 scores.
inline std::array<std::vector<int>, kCriteria> read_expert_scores_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::MalformedFile, "empty expert score CSV");
  const std::size_t width = detail::split_csv_line(line).size();
  if (width < 2) throw Error(ErrorKind::EmptyScores, "expert score CSV has no expert columns");
  std::array<std::vector<int>, kCriteria> scores;
  std::array<bool, kCriteria> seen{};
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != width) throw Error(ErrorKind::MalformedFile, "ragged expert score row: " + line);
    const std::size_t c = parse_criterion(cells[0]);
    seen[c] = true;
    for (std::size_t e = 1; e < cells.size(); ++e) scores[c].push_back(static_cast<int>(detail::parse_number(cells[e])));
  }
  for (bool s : seen)
    if (!s) throw Error(ErrorKind::MalformedFile, "expert score CSV needs all four criteria");
  return scores;
}

// ---------------------------------------------------------------------------
// Image metrics

struct ImageGray {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<float> pixels;  // row-major, values in [0, 1]

  ImageGray() = default;
  ImageGray(std::size_t height, std::size_t width, std::vector<float> px) : h(height), w(width), pixels(std::move(px)) {
    if (h == 0 || w == 0) throw Error(ErrorKind::ShapeMismatch, "image dimensions must be positive");
    if (pixels.size() != h * w) throw Error(ErrorKind::ShapeMismatch, "pixel count does not match h x w");
    for (float p : pixels)
      if (!(p >= 0.0f && p <= 1.0f)) throw Error(ErrorKind::InvalidArgument, "pixel outside [0, 1]");
  }

  float at(std::size_t y, std::size_t x) const { return pixels[y * w + x]; }
};

inline void require_same_size(const ImageGray& a, const ImageGray& b) {
  if (a.h != b.h || a.w != b.w) throw Error(ErrorKind::ShapeMismatch, "images differ in size");
}

inline double mse(const ImageGray& a, const ImageGray& b) {
  require_same_size(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    s += d * d;
  }
  return s / static_cast<double>(a.pixels.size());
}

inline double psnr_from_mse(double mse_value, double max_value = 1.0) {
  if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_value * max_value / mse_value);
}

/// 10 log10(max^2 / MSE); +infinity when the images are identical.
inline double psnr(const ImageGray& a, const ImageGray& b, double max_value = 1.0) {
  return psnr_from_mse(mse(a, b), max_value);
}

inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;
inline constexpr double kSsimRange = 1.0;

namespace detail {

inline double ssim_from_stats(double mu_a, double mu_b, double var_a, double var_b, double cov) {
  const double c1 = (kSsimK1 * kSsimRange) * (kSsimK1 * kSsimRange);
  const double c2 = (kSsimK2 * kSsimRange) * (kSsimK2 * kSsimRange);
  return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
}

}  // namespace detail

enum class SsimMode { Global, Windowed };

/// SSIM from whole-image statistics (population variance/covariance).
inline double ssim_global(const ImageGray& a, const ImageGray& b) {
  require_same_size(a, b);
  const std::size_t n = a.pixels.size();
  if (n < 2) throw Error(ErrorKind::ShapeMismatch, "ssim needs at least two pixels");
  double mu_a = 0.0, mu_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mu_a += a.pixels[i];
    mu_b += b.pixels[i];
  }
  mu_a /= static_cast<double>(n);
  mu_b /= static_cast<double>(n);
  double var_a = 0.0, var_b = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a.pixels[i] - mu_a, db = b.pixels[i] - mu_b;
    var_a += da * da;
    var_b += db * db;
    cov += da * db;
  }
  const double inv = 1.0 / static_cast<double>(n);
  return detail::ssim_from_stats(mu_a, mu_b, var_a * inv, var_b * inv, cov * inv);
}

/// Mean SSIM over every fully-contained 11x11 Gaussian window (sigma 1.5).
inline double ssim_windowed(const ImageGray& a, const ImageGray& b) {
  require_same_size(a, b);
  constexpr int kWin = 11;
  if (a.h < kWin || a.w < kWin) throw Error(ErrorKind::ShapeMismatch, "windowed ssim needs images of at least 11x11");
  std::array<double, kWin> g{};
  double gsum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * 1.5 * 1.5));
    gsum += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= gsum;

  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t y0 = 0; y0 + kWin <= a.h; ++y0) {
    for (std::size_t x0 = 0; x0 + kWin <= a.w; ++x0) {
      double mu_a = 0, mu_b = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t dy = 0; dy < kWin; ++dy)
        for (std::size_t dx = 0; dx < kWin; ++dx) {
          const double wgt = g[dy] * g[dx];
          const double va = a.at(y0 + dy, x0 + dx), vb = b.at(y0 + dy, x0 + dx);
          mu_a += wgt * va;
          mu_b += wgt * vb;
          saa += wgt * va * va;
          sbb += wgt * vb * vb;
          sab += wgt * va * vb;
        }
      total += detail::ssim_from_stats(mu_a, mu_b, saa - mu_a * mu_a, sbb - mu_b * mu_b, sab - mu_a * mu_b);
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

inline double ssim(const ImageGray& a, const ImageGray& b, SsimMode mode = SsimMode::Global) {
  return mode == SsimMode::Global ? ssim_global(a, b) : ssim_windowed(a, b);
}

}  // namespace hm
