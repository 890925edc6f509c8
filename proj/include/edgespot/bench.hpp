#pragma once

// Token-mixer scaling benchmark: forward time of the efficient mixer and of
// softmax self-attention over a sweep of token counts, with log-log slopes.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>

#include "edgespot/checkpoint.hpp"
#include "edgespot/em_encoder.hpp"

namespace edgespot {

inline constexpr const char* kBenchHeader = "mechanism,n_tokens,channels,reps,median_ns,p10_ns,p90_ns";

struct BenchRecord {
  std::string mechanism;
  std::size_t n_tokens = 0;
  std::size_t channels = 0;
  std::size_t reps = 0;
  double median_ns = 0, p10_ns = 0, p90_ns = 0;
};

struct BenchConfig {
  std::vector<std::string> mechanisms = {"em", "softmax"};
  std::vector<std::size_t> sizes = {1000, 2000, 4000, 8000};
  std::size_t channels = 64;
  std::size_t reps = 30;
  std::size_t warmup = 3;
  double min_sample_ns = 2e6;  // inner loop grows until one sample takes this long
  std::uint64_t seed = 0;

  void validate() const {
    if (sizes.size() < 3) throw std::invalid_argument("bench: need at least 3 token sizes");
    for (std::size_t i = 1; i < sizes.size(); ++i)
      if (sizes[i] <= sizes[i - 1]) throw std::invalid_argument("bench: token sizes must be strictly increasing");
    if (sizes.front() < 1) throw std::invalid_argument("bench: token sizes must be >= 1");
    if (reps < 30) throw std::invalid_argument("bench: reps must be >= 30");
    if (channels < 1) throw std::invalid_argument("bench: channels must be >= 1");
    for (const auto& m : mechanisms)
      if (m != "em" && m != "softmax") throw std::invalid_argument("bench: unknown mechanism '" + m + "'");
    if (mechanisms.empty()) throw std::invalid_argument("bench: no mechanisms");
  }
};

/// Linearly interpolated quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& s, double q) {
  if (s.empty()) return 0;
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(s.size() - 1, lo + 1);
  return s[lo] + (s[hi] - s[lo]) * (pos - static_cast<double>(lo));
}

/// Warm-up calls, then the inner-loop count that makes one sample span at
/// least min_sample_ns.
inline std::size_t calibrate_inner(const std::function<void()>& fn, std::size_t warmup, double min_sample_ns) {
  using clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::size_t inner = 1;
  for (;;) {
    const auto t0 = clock::now();
    for (std::size_t i = 0; i < inner; ++i) fn();
    const double ns = std::chrono::duration<double, std::nano>(clock::now() - t0).count();
    if (ns >= min_sample_ns || inner >= (std::size_t{1} << 20)) return inner;
    inner = std::max(inner * 2, static_cast<std::size_t>(std::ceil(inner * min_sample_ns / std::max(ns, 1.0))));
  }
}

/// Mean per-call time of one sample of `inner` calls.
inline double sample_ns(const std::function<void()>& fn, std::size_t inner) {
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < inner; ++i) fn();
  return std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - t0).count() /
         static_cast<double>(inner);
}

inline BenchRecord summarize(std::vector<double> samples) {
  std::sort(samples.begin(), samples.end());
  BenchRecord r;
  r.reps = samples.size();
  r.median_ns = quantile_sorted(samples, 0.5);
  r.p10_ns = quantile_sorted(samples, 0.1);
  r.p90_ns = quantile_sorted(samples, 0.9);
  return r;
}

/// Single-threaded forward timing of each mechanism at each size. Samples
/// are taken round-robin over all configurations, so slow drift of the host
/// (frequency, neighbours) spreads over every size instead of biasing one.
inline std::vector<BenchRecord> run_bench(const BenchConfig& cfg) {
  cfg.validate();
  Eigen::setNbThreads(1);
  NoGradGuard ng;
  const std::size_t C = cfg.channels;
  struct Job {
    std::string mech;
    std::size_t N;
    std::shared_ptr<Tensor<float>> x;
    std::shared_ptr<EMMixerParams<float>> em;
    std::shared_ptr<SoftmaxAttentionParams<float>> sa;
    std::function<void()> fn;
    std::size_t inner = 1;
    std::vector<double> samples;
  };
  std::vector<Job> jobs;
  for (const auto& mech : cfg.mechanisms) {
    Rng rng(derive_seed(cfg.seed, "bench." + mech));
    auto em = std::make_shared<EMMixerParams<float>>(C, rng);
    auto sa = std::make_shared<SoftmaxAttentionParams<float>>(C, rng);
    for (std::size_t N : cfg.sizes) {
      std::vector<float> xs(N * C);
      for (auto& v : xs) v = static_cast<float>(rng.normal());
      Job j{mech, N, std::make_shared<Tensor<float>>(Shape{N, C}, std::move(xs)), em, sa, {}, 1, {}};
      auto x = j.x;
      if (mech == "em")
        j.fn = [x, em] { (void)efficient_mixer(*x, *em); };
      else
        j.fn = [x, sa] { (void)softmax_self_attention(*x, *sa); };
      jobs.push_back(std::move(j));
    }
  }
  for (auto& j : jobs) j.inner = calibrate_inner(j.fn, cfg.warmup, cfg.min_sample_ns);
  for (std::size_t r = 0; r < cfg.reps; ++r)
    for (auto& j : jobs) j.samples.push_back(sample_ns(j.fn, j.inner));
  std::vector<BenchRecord> out;
  for (auto& j : jobs) {
    BenchRecord r = summarize(std::move(j.samples));
    r.mechanism = j.mech;
    r.n_tokens = j.N;
    r.channels = C;
    out.push_back(r);
  }
  return out;
}

/// Least-squares slope of log(median_ns) against log(n_tokens).
inline double loglog_slope(const std::vector<BenchRecord>& recs, const std::string& mechanism) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : recs)
    if (r.mechanism == mechanism) pts.emplace_back(std::log(static_cast<double>(r.n_tokens)), std::log(r.median_ns));
  if (pts.size() < 2) throw std::invalid_argument("slope needs >= 2 sizes for " + mechanism);
  double mx = 0, my = 0;
  for (auto [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double sxy = 0, sxx = 0;
  for (auto [x, y] : pts) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
  }
  return sxy / sxx;
}

inline std::vector<std::string> bench_mechanisms(const std::vector<BenchRecord>& recs) {
  std::vector<std::string> m;
  for (const auto& r : recs)
    if (std::find(m.begin(), m.end(), r.mechanism) == m.end()) m.push_back(r.mechanism);
  return m;
}

/// CSV rows followed by one "# slope,<mechanism>,<value>" line per mechanism.
inline void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& recs) {
  os << kBenchHeader << '\n';
  for (const auto& r : recs)
    os << r.mechanism << ',' << r.n_tokens << ',' << r.channels << ',' << r.reps << ',' << std::llround(r.median_ns) << ','
       << std::llround(r.p10_ns) << ',' << std::llround(r.p90_ns) << '\n';
  for (const auto& m : bench_mechanisms(recs)) {
    std::ostringstream s;
    s.precision(4);
    s << std::fixed << loglog_slope(recs, m);
    os << "# slope," << m << ',' << s.str() << '\n';
  }
}

inline std::vector<BenchRecord> read_bench_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::vector<BenchRecord> out;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (!header) {
      if (line != kBenchHeader) throw DataError(where + ": expected header '" + std::string(kBenchHeader) + "'");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw DataError(where + ": expected 7 fields, got " + std::to_string(f.size()));
    try {
      BenchRecord r;
      r.mechanism = f[0];
      r.n_tokens = std::stoul(f[1]);
      r.channels = std::stoul(f[2]);
      r.reps = std::stoul(f[3]);
      r.median_ns = std::stod(f[4]);
      r.p10_ns = std::stod(f[5]);
      r.p90_ns = std::stod(f[6]);
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw DataError(where + ": malformed numeric field");
    }
  }
  if (!header) throw DataError(path.string() + ": missing header");
  if (out.empty()) throw DataError(path.string() + ": no data rows");
  return out;
}

}  // namespace edgespot
