// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Objective evaluation battery as pure functions. Degenerate inputs yield a
// MetricOutcome with defined == false or a flag, never a silent zero.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jelly/tensor.hpp"

namespace jelly::metrics {

struct MetricOutcome {
  std::string name;
  double value = 0.0;
  bool defined = true;
  long count = 0;
  std::vector<std::string> flags;

  bool has_flag(std::string_view f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
  }
};

inline nlohmann::json to_json(const MetricOutcome& m) {
  nlohmann::json j{{"name", m.name}, {"count", m.count}, {"flags", m.flags}};
  j["value"] = m.defined ? nlohmann::json(m.value) : nlohmann::json(nullptr);
  return j;
}

inline MetricOutcome undefined(std::string name, long count, std::string flag) {
  MetricOutcome m;
  m.name = std::move(name);
  m.defined = false;
  m.count = count;
  m.flags.push_back(std::move(flag));
  return m;
}

struct ClassificationReport {
  double wa = 0.0;
  double ua = 0.0;
  double macro_f1 = 0.0;
  long count = 0;
  std::vector<std::vector<long>> confusion;  // [reference][prediction]
};

// WA: overall accuracy. UA: mean recall over categories present in the
// references. Macro F1: mean F1 over categories referenced or predicted;
// categories never seen on either side are skipped.
inline ClassificationReport classification_metrics(const std::vector<int>& refs,
                                                   const std::vector<int>& preds,
                                                   int num_categories) {
  require(refs.size() == preds.size(), ErrorKind::kShape,
          "classification_metrics: " + std::to_string(refs.size()) + " references vs " +
              std::to_string(preds.size()) + " predictions");
  require(!refs.empty(), ErrorKind::kShape, "classification_metrics: empty input");
  require(num_categories >= 1, ErrorKind::kDomain, "classification_metrics: no categories");
  ClassificationReport r;
  r.count = static_cast<long>(refs.size());
  r.confusion.assign(static_cast<std::size_t>(num_categories),
                     std::vector<long>(static_cast<std::size_t>(num_categories), 0));
  long correct = 0;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    require(refs[k] >= 0 && refs[k] < num_categories && preds[k] >= 0 &&
                preds[k] < num_categories,
            ErrorKind::kDomain, "classification_metrics: category out of range");
    ++r.confusion[static_cast<std::size_t>(refs[k])][static_cast<std::size_t>(preds[k])];
    correct += refs[k] == preds[k];
  }
  r.wa = static_cast<double>(correct) / static_cast<double>(r.count);
  double recall_sum = 0.0, f1_sum = 0.0;
  int recall_n = 0, f1_n = 0;
  for (int c = 0; c < num_categories; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    long tp = r.confusion[cu][cu], ref_n = 0, pred_n = 0;
    for (int o = 0; o < num_categories; ++o) {
      ref_n += r.confusion[cu][static_cast<std::size_t>(o)];
      pred_n += r.confusion[static_cast<std::size_t>(o)][cu];
    }
    if (ref_n > 0) {
      recall_sum += static_cast<double>(tp) / static_cast<double>(ref_n);
      ++recall_n;
    }
    if (ref_n > 0 || pred_n > 0) {
      f1_sum += 2.0 * static_cast<double>(tp) / static_cast<double>(ref_n + pred_n);
      ++f1_n;
    }
  }
  r.ua = recall_sum / recall_n;
  r.macro_f1 = f1_sum / f1_n;
  return r;
}

// Mean absolute utterance-duration difference.
inline MetricOutcome ddur(const std::vector<double>& ref, const std::vector<double>& test) {
  require(ref.size() == test.size(), ErrorKind::kShape, "ddur: length mismatch");
  if (ref.empty()) return undefined("ddur", 0, "empty_input");
  MetricOutcome m;
  m.name = "ddur";
  m.count = static_cast<long>(ref.size());
  for (std::size_t k = 0; k < ref.size(); ++k) m.value += std::abs(ref[k] - test[k]);
  m.value /= static_cast<double>(ref.size());
  return m;
}

// (10 / ln 10) * sqrt(2) * mean over frames of ||ref_t - test_t||, over
// coefficients 1..D-1 when skip_c0.
template <typename T>
MetricOutcome mcd(const Mat<T>& ref, const Mat<T>& test, bool skip_c0 = true) {
  require(ref.rows() == test.rows() && ref.cols() == test.cols(), ErrorKind::kShape,
          "mcd: shape mismatch " + std::to_string(ref.rows()) + "x" + std::to_string(ref.cols()) +
              " vs " + std::to_string(test.rows()) + "x" + std::to_string(test.cols()));
  require(ref.cols() >= 2, ErrorKind::kShape, "mcd: need at least 2 coefficients");
  if (ref.rows() == 0) return undefined("mcd", 0, "empty_input");
  const Eigen::Index c0 = skip_c0 ? 1 : 0;
  const double k = 10.0 / std::numbers::ln10 * std::numbers::sqrt2;
  double sum = 0.0;
  for (Eigen::Index f = 0; f < ref.rows(); ++f) {
    double sq = 0.0;
    for (Eigen::Index c = c0; c < ref.cols(); ++c) {
      const double d = static_cast<double>(ref(f, c)) - static_cast<double>(test(f, c));
      sq += d * d;
    }
    sum += std::sqrt(sq);
  }
  MetricOutcome m;
  m.name = "mcd";
  m.count = static_cast<long>(ref.rows());
  m.value = k * sum / static_cast<double>(ref.rows());
  return m;
}

struct PitchTrack {
  std::vector<double> f0;
  std::vector<std::uint8_t> voiced;
  std::vector<double> periodicity;

  std::size_t frames() const { return f0.size(); }
};

struct F0Report {
  MetricOutcome rmse_f0;
  MetricOutcome rmse_periodicity;
  MetricOutcome f1_vuv;
};

// RMSE_f0 over frames voiced in both tracks; F1 with voiced as the positive
// class; periodicity RMSE over all frames.
inline F0Report f0_metrics(const PitchTrack& ref, const PitchTrack& test) {
  const std::size_t n = ref.frames();
  require(ref.voiced.size() == n && ref.periodicity.size() == n && test.frames() == n &&
              test.voiced.size() == n && test.periodicity.size() == n,
          ErrorKind::kShape, "f0_metrics: tracks must share one frame count");
  F0Report r;
  double sq = 0.0, psq = 0.0;
  long both = 0, tp = 0, fp = 0, fn = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const bool rv = ref.voiced[k] != 0, tv = test.voiced[k] != 0;
    if (rv && tv) {
      sq += (ref.f0[k] - test.f0[k]) * (ref.f0[k] - test.f0[k]);
      ++both;
    }
    tp += rv && tv;
    fp += !rv && tv;
    fn += rv && !tv;
    psq += (ref.periodicity[k] - test.periodicity[k]) * (ref.periodicity[k] - test.periodicity[k]);
  }
  if (both == 0) {
    r.rmse_f0 = undefined("rmse_f0", 0, "no_mutually_voiced_frames");
  } else {
    r.rmse_f0.name = "rmse_f0";
    r.rmse_f0.count = both;
    r.rmse_f0.value = std::sqrt(sq / static_cast<double>(both));
  }
  if (n == 0) {
    r.rmse_periodicity = undefined("rmse_periodicity", 0, "empty_input");
  } else {
    r.rmse_periodicity.name = "rmse_periodicity";
    r.rmse_periodicity.count = static_cast<long>(n);
    r.rmse_periodicity.value = std::sqrt(psq / static_cast<double>(n));
  }
  r.f1_vuv.name = "f1_vuv";
  r.f1_vuv.count = static_cast<long>(n);
  if (2 * tp + fp + fn == 0) {
    r.f1_vuv.value = 0.0;
    r.f1_vuv.flags.push_back("no_voiced_frames");
  } else {
    r.f1_vuv.value = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  }
  return r;
}

// Levenshtein distance between token sequences.
inline long edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<long> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<long>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<long>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Edit distance / |ref|. An empty reference yields |hyp| with a flag.
inline MetricOutcome word_error_rate(const std::vector<int>& ref, const std::vector<int>& hyp) {
  MetricOutcome m;
  m.name = "wer";
  m.count = static_cast<long>(ref.size());
  if (ref.empty()) {
    m.value = static_cast<double>(hyp.size());
    m.flags.push_back("empty_reference");
    return m;
  }
  m.value = static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
  return m;
}

// Linear time rescaling of a frame track (rows) to `frames` rows; endpoints
// map onto endpoints.
template <typename T>
Mat<T> rescale_frames(const Mat<T>& track, Eigen::Index frames) {
  require(track.rows() >= 1 && frames >= 1, ErrorKind::kShape,
          "rescale_frames: need non-empty tracks");
  Mat<T> out(frames, track.cols());
  for (Eigen::Index f = 0; f < frames; ++f) {
    const double pos = frames == 1 ? 0.0
                                   : static_cast<double>(f) * static_cast<double>(track.rows() - 1) /
                                         static_cast<double>(frames - 1);
    const auto lo = static_cast<Eigen::Index>(std::floor(pos));
    const Eigen::Index hi = std::min(lo + 1, track.rows() - 1);
    const T w = static_cast<T>(pos - static_cast<double>(lo));
    out.row(f) = (T(1) - w) * track.row(lo) + w * track.row(hi);
  }
  return out;
}

inline std::vector<double> rescale_track(const std::vector<double>& track, std::size_t frames) {
  Mat<double> m(static_cast<Eigen::Index>(track.size()), 1);
  for (std::size_t k = 0; k < track.size(); ++k) m(static_cast<Eigen::Index>(k), 0) = track[k];
  const auto r = rescale_frames(m, static_cast<Eigen::Index>(frames));
  return {r.data(), r.data() + r.size()};
}

}  // namespace jelly::metrics
