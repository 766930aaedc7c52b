#include "irnet/datagen.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>

#include "binio.hpp"
#include "irnet/error.hpp"
#include "irnet/rng.hpp"

namespace irnet {

namespace {

// ---- timestamps -------------------------------------------------------------

std::optional<std::int64_t> parse_iso8601(const std::string& s) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
  char sep = 0;
  int consumed = 0;
  if (std::sscanf(s.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &se,
                  &consumed) != 7)
    return std::nullopt;
  if (sep != 'T' && sep != ' ') return std::nullopt;
  const std::string rest = s.substr(static_cast<std::size_t>(consumed));
  if (!rest.empty() && rest != "Z") return std::nullopt;
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || se > 60) return std::nullopt;
  std::tm tm{};
  tm.tm_year = y - 1900;
  tm.tm_mon = mo - 1;
  tm.tm_mday = d;
  tm.tm_hour = h;
  tm.tm_min = mi;
  tm.tm_sec = se;
  return static_cast<std::int64_t>(timegm(&tm));
}

std::string format_iso8601(std::int64_t epoch) {
  std::time_t t = static_cast<std::time_t>(epoch);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

// ---- CSV plumbing -----------------------------------------------------------

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::optional<RoadId> parse_road_id(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (errno != 0 || end != s.c_str() + s.size()) return std::nullopt;
  if (s[0] == '-') return std::nullopt;
  return static_cast<RoadId>(v);
}

std::optional<double> parse_speed(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

[[noreturn]] void bad_row(const std::string& path, int line_no, const std::string& why) {
  raise(Errc::malformed_row, path + ":" + std::to_string(line_no) + ": " + why);
}

/// Lines of a CSV file with the trailing CR stripped; first element is the
/// line number (1-based), blank lines skipped.
std::vector<std::pair<int, std::string>> read_csv_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::io_error, "cannot open " + path);
  std::vector<std::pair<int, std::string>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    out.emplace_back(line_no, line);
  }
  if (in.bad()) raise(Errc::io_error, "failed reading " + path);
  return out;
}

/// Builds the shared-clock store from per-road sparse (timestamp -> speed)
/// values: every road must cover the grid spanning the global min..max
/// timestamp; interior gaps forward-fill when allowed, anything else is a
/// MissingTimestamp.
SpeedStore assemble_grid(const std::string& path,
                         const std::map<RoadId, std::map<std::int64_t, double>>& values,
                         std::int64_t interval_seconds, bool forward_fill) {
  if (values.empty()) raise(Errc::empty_dataset, path + ": no data rows");
  std::int64_t lo = std::numeric_limits<std::int64_t>::max();
  std::int64_t hi = std::numeric_limits<std::int64_t>::min();
  for (const auto& road_entry : values) {
    lo = std::min(lo, road_entry.second.begin()->first);
    hi = std::max(hi, road_entry.second.rbegin()->first);
  }
  for (const auto& [road, ts_map] : values)
    for (const auto& ts_entry : ts_map)
      if ((ts_entry.first - lo) % interval_seconds != 0)
        raise(Errc::malformed_row, path + ": off-grid timestamp " + format_iso8601(ts_entry.first) +
                                       " for road " + std::to_string(road));

  SpeedStore store;
  store.interval_seconds = interval_seconds;
  store.start_epoch_seconds = lo;
  const std::int64_t n = (hi - lo) / interval_seconds + 1;
  for (const auto& [road, ts_map] : values) {
    std::vector<double> series;
    series.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t ts = lo + i * interval_seconds;
      auto it = ts_map.find(ts);
      if (it != ts_map.end()) {
        series.push_back(it->second);
      } else if (forward_fill && !series.empty()) {
        series.push_back(series.back());
      } else {
        raise(Errc::missing_timestamp, path + ": road " + std::to_string(road) +
                                           " has no reading at " + format_iso8601(ts));
      }
    }
    store.series.emplace(road, std::move(series));
  }
  return store;
}

void check_interval(std::int64_t interval_seconds) {
  if (interval_seconds <= 0)
    raise(Errc::bad_config, "interval must be positive, got " + std::to_string(interval_seconds));
}

Eigen::Index pow_k(int k, int d) {
  Eigen::Index n = 1;
  for (int i = 0; i < d; ++i) n *= k;
  return n;
}

}  // namespace

// ---- ingestion ----------------------------------------------------------------

SpeedStore ingest_sensor_csv(const std::string& path, std::int64_t interval_seconds,
                             bool forward_fill) {
  check_interval(interval_seconds);
  const auto lines = read_csv_lines(path);
  if (lines.empty()) raise(Errc::empty_dataset, path + ": empty file");
  if (lines.front().second != "sensor_id,road_id,timestamp_iso8601,speed_mph")
    bad_row(path, lines.front().first, "expected header sensor_id,road_id,timestamp_iso8601,speed_mph");

  // (road, timestamp) -> running mean state over that road's sensors.
  std::map<RoadId, std::map<std::int64_t, std::pair<double, int>>> sums;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& [line_no, line] = lines[i];
    const auto fields = split_fields(line);
    if (fields.size() != 4) bad_row(path, line_no, "expected 4 fields, got " + std::to_string(fields.size()));
    if (fields[0].empty()) bad_row(path, line_no, "empty sensor id");
    const auto road = parse_road_id(fields[1]);
    if (!road) bad_row(path, line_no, "bad road id '" + fields[1] + "'");
    const auto ts = parse_iso8601(fields[2]);
    if (!ts) bad_row(path, line_no, "bad timestamp '" + fields[2] + "'");
    const auto speed = parse_speed(fields[3]);
    if (!speed) bad_row(path, line_no, "bad speed '" + fields[3] + "'");
    if (*speed <= 0.0)
      raise(Errc::non_positive_speed,
            path + ":" + std::to_string(line_no) + ": speed " + fields[3] + " must be positive");
    auto& cell = sums[*road][*ts];
    cell.first += *speed;
    cell.second += 1;
  }

  std::map<RoadId, std::map<std::int64_t, double>> means;
  for (const auto& [road, ts_map] : sums)
    for (const auto& [ts, cell] : ts_map) means[road][ts] = cell.first / cell.second;
  return assemble_grid(path, means, interval_seconds, forward_fill);
}

SpeedStore load_road_csv(const std::string& path, std::int64_t interval_seconds,
                         bool forward_fill) {
  check_interval(interval_seconds);
  const auto lines = read_csv_lines(path);
  if (lines.empty()) raise(Errc::empty_dataset, path + ": empty file");
  if (lines.front().second != "road_id,timestamp_iso8601,speed_mph")
    bad_row(path, lines.front().first, "expected header road_id,timestamp_iso8601,speed_mph");

  std::map<RoadId, std::map<std::int64_t, double>> values;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& [line_no, line] = lines[i];
    const auto fields = split_fields(line);
    if (fields.size() != 3) bad_row(path, line_no, "expected 3 fields, got " + std::to_string(fields.size()));
    const auto road = parse_road_id(fields[0]);
    if (!road) bad_row(path, line_no, "bad road id '" + fields[0] + "'");
    const auto ts = parse_iso8601(fields[1]);
    if (!ts) bad_row(path, line_no, "bad timestamp '" + fields[1] + "'");
    const auto speed = parse_speed(fields[2]);
    if (!speed) bad_row(path, line_no, "bad speed '" + fields[2] + "'");
    if (*speed <= 0.0)
      raise(Errc::non_positive_speed,
            path + ":" + std::to_string(line_no) + ": speed " + fields[2] + " must be positive");
    if (!values[*road].emplace(*ts, *speed).second)
      bad_row(path, line_no, "duplicate reading for road " + fields[0] + " at " + fields[1]);
  }
  return assemble_grid(path, values, interval_seconds, forward_fill);
}

void save_road_csv(const SpeedStore& store, const std::string& path) {
  std::ostringstream out;
  out << "road_id,timestamp_iso8601,speed_mph\n";
  char num[64];
  for (const auto& [road, series] : store.series) {
    for (std::size_t i = 0; i < series.size(); ++i) {
      const std::int64_t ts =
          store.start_epoch_seconds + static_cast<std::int64_t>(i) * store.interval_seconds;
      std::snprintf(num, sizeof num, "%.17g", series[i]);
      out << road << ',' << format_iso8601(ts) << ',' << num << '\n';
    }
  }
  binio::write_file(path, out.str());
}

// ---- sample construction ------------------------------------------------------

Eigen::MatrixXd set_to_matrix(const OrderedRoadSet& set, const SpeedStore& store, Eigen::Index t,
                              int h, double dumb_fill) {
  if (h < 1) raise(Errc::bad_config, "history length must be >= 1");
  if (t - h + 1 < 0 || t >= store.length())
    raise(Errc::window_out_of_range, "window [" + std::to_string(t - h + 1) + ", " +
                                         std::to_string(t) + "] outside series of length " +
                                         std::to_string(store.length()));
  Eigen::MatrixXd m(static_cast<Eigen::Index>(set.slots.size()), h);
  for (std::size_t z = 0; z < set.slots.size(); ++z) {
    const RoadId road = set.slots[z];
    if (is_dumb(road)) {
      m.row(static_cast<Eigen::Index>(z)).setConstant(dumb_fill);
      continue;
    }
    auto it = store.series.find(road);
    if (it == store.series.end())
      raise(Errc::unknown_road, "road " + std::to_string(road) + " not in the speed store");
    for (int c = 0; c < h; ++c)
      m(static_cast<Eigen::Index>(z), c) = it->second[static_cast<std::size_t>(t - h + 1 + c)];
  }
  return m;
}

Dataset make_dataset(const ReconstructionPlan& plan, const SpeedStore& store, int h, int P,
                     Eigen::Index begin, Eigen::Index end) {
  if (h < 1 || P < 1) raise(Errc::bad_config, "need h >= 1 and P >= 1");
  if (begin < 0 || end > store.length() || begin >= end)
    raise(Errc::window_out_of_range, "sample range [" + std::to_string(begin) + ", " +
                                         std::to_string(end) + ") outside store of length " +
                                         std::to_string(store.length()));
  auto target_it = store.series.find(plan.target);
  if (target_it == store.series.end())
    raise(Errc::unknown_road, "target road " + std::to_string(plan.target) + " not in the speed store");
  const std::vector<double>& target = target_it->second;

  const Eigen::Index count = (end - begin) - h - P + 1;
  if (count <= 0)
    raise(Errc::range_too_short, "range of length " + std::to_string(end - begin) +
                                     " cannot fit h=" + std::to_string(h) +
                                     " history plus P=" + std::to_string(P) + " labels");

  Dataset out;
  out.reserve(static_cast<std::size_t>(count));
  for (Eigen::Index t = begin + h - 1; t + P < end; ++t) {
    Sample s;
    s.t = t;
    s.s_tar.resize(h);
    for (int c = 0; c < h; ++c) s.s_tar[c] = target[static_cast<std::size_t>(t - h + 1 + c)];
    for (const OrderedRoadSet& set : plan.upstream_sets)
      s.um.push_back(set_to_matrix(set, store, t, h, 0.0));
    for (const OrderedRoadSet& set : plan.downstream_sets)
      s.dm.push_back(set_to_matrix(set, store, t, h, 0.0));
    s.labels.resize(P);
    for (int p = 1; p <= P; ++p) s.labels[p - 1] = target[static_cast<std::size_t>(t + p)];
    out.push_back(std::move(s));
  }
  return out;
}

SplitDataset chrono_split(Dataset samples, const std::array<double, 3>& fractions) {
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) raise(Errc::bad_fractions, "fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    raise(Errc::bad_fractions, "fractions must sum to 1, got " + std::to_string(sum));

  std::sort(samples.begin(), samples.end(),
            [](const Sample& a, const Sample& b) { return a.t < b.t; });
  const std::size_t n = samples.size();
  const std::size_t n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fractions[1]));
  const std::size_t n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fractions[2]));
  const std::size_t n_train = n - n_val - n_test;

  SplitDataset split;
  split.train.assign(std::make_move_iterator(samples.begin()),
                     std::make_move_iterator(samples.begin() + static_cast<std::ptrdiff_t>(n_train)));
  split.val.assign(std::make_move_iterator(samples.begin() + static_cast<std::ptrdiff_t>(n_train)),
                   std::make_move_iterator(samples.begin() + static_cast<std::ptrdiff_t>(n_train + n_val)));
  split.test.assign(std::make_move_iterator(samples.begin() + static_cast<std::ptrdiff_t>(n_train + n_val)),
                    std::make_move_iterator(samples.end()));
  return split;
}

// ---- normalization --------------------------------------------------------------

Normalizer::Normalizer(std::map<RoadId, std::pair<double, double>> ranges)
    : ranges_(std::move(ranges)) {
  for (const auto& [road, mm] : ranges_)
    if (!(mm.second > mm.first))
      raise(Errc::degenerate_range, "road " + std::to_string(road) + " has max <= min");
}

const std::pair<double, double>& Normalizer::range_of(RoadId road) const {
  auto it = ranges_.find(road);
  if (it == ranges_.end())
    raise(Errc::unknown_road, "road " + std::to_string(road) + " was not fitted");
  return it->second;
}

double Normalizer::apply(RoadId road, double x) const {
  const auto& [mn, mx] = range_of(road);
  return (x - mn) / (mx - mn);
}

double Normalizer::invert(RoadId road, double y) const {
  const auto& [mn, mx] = range_of(road);
  return y * (mx - mn) + mn;
}

Normalizer fit_normalizer(const Dataset& train, const SpeedStore& store) {
  if (train.empty()) raise(Errc::empty_dataset, "cannot fit a normalizer on zero samples");
  const int h = static_cast<int>(train.front().s_tar.size());
  const int P = static_cast<int>(train.front().labels.size());
  const Eigen::Index lo = train.front().t - h + 1;
  const Eigen::Index hi = train.back().t + P;  // inclusive; last training label
  if (lo < 0 || hi >= store.length())
    raise(Errc::window_out_of_range, "training samples reference indices outside the store");

  std::map<RoadId, std::pair<double, double>> ranges;
  for (const auto& [road, series] : store.series) {
    double mn = series[static_cast<std::size_t>(lo)];
    double mx = mn;
    for (Eigen::Index i = lo + 1; i <= hi; ++i) {
      mn = std::min(mn, series[static_cast<std::size_t>(i)]);
      mx = std::max(mx, series[static_cast<std::size_t>(i)]);
    }
    if (!(mx > mn))
      raise(Errc::degenerate_range, "road " + std::to_string(road) +
                                        " is constant on the training window");
    ranges.emplace(road, std::make_pair(mn, mx));
  }
  return Normalizer(std::move(ranges));
}

Dataset normalize_samples(const Dataset& samples, const ReconstructionPlan& plan,
                          const Normalizer& normalizer, double dumb_fill) {
  Dataset out;
  out.reserve(samples.size());
  for (const Sample& s : samples) {
    if (s.um.size() != plan.upstream_sets.size() || s.dm.size() != plan.downstream_sets.size())
      raise(Errc::shape_mismatch, "sample matrices disagree with the plan's order count");
    Sample n = s;
    for (Eigen::Index i = 0; i < n.s_tar.size(); ++i)
      n.s_tar[i] = normalizer.apply(plan.target, n.s_tar[i]);
    auto transform = [&](const std::vector<OrderedRoadSet>& sets, std::vector<Eigen::MatrixXd>& ms) {
      for (std::size_t d = 0; d < sets.size(); ++d) {
        const auto& slots = sets[d].slots;
        Eigen::MatrixXd& m = ms[d];
        if (m.rows() != static_cast<Eigen::Index>(slots.size()))
          raise(Errc::shape_mismatch, "sample matrix rows disagree with the plan's slot count");
        for (std::size_t z = 0; z < slots.size(); ++z) {
          const Eigen::Index row = static_cast<Eigen::Index>(z);
          if (is_dumb(slots[z])) {
            m.row(row).setConstant(dumb_fill);
          } else {
            for (Eigen::Index c = 0; c < m.cols(); ++c)
              m(row, c) = normalizer.apply(slots[z], m(row, c));
          }
        }
      }
    };
    transform(plan.upstream_sets, n.um);
    transform(plan.downstream_sets, n.dm);
    out.push_back(std::move(n));
  }
  return out;
}

FeatureMap make_features(const SpeedStore& store, Eigen::Index end) {
  if (end < 1 || end > store.length())
    raise(Errc::window_out_of_range, "feature window end " + std::to_string(end) +
                                         " outside series of length " + std::to_string(store.length()));
  FeatureMap features;
  for (const auto& [road, series] : store.series) {
    Eigen::VectorXd f(end);
    for (Eigen::Index i = 0; i < end; ++i) f[i] = series[static_cast<std::size_t>(i)];
    features.emplace(road, std::move(f));
  }
  return features;
}

// ---- synthetic substrate ---------------------------------------------------------

SynthResult synth_network(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.roads < 1 || spec.layers < 1 || spec.layers > spec.roads || spec.steps < 1 ||
      spec.noise < 0.0 || spec.max_parents < 1)
    raise(Errc::bad_spec, "need roads >= layers >= 1, steps >= 1, noise >= 0, max_parents >= 1");

  Rng rng(seed);

  // Roads 1..N assigned to layers front-loaded: the first (roads % layers)
  // layers take one extra road.
  std::vector<std::vector<RoadId>> layers(static_cast<std::size_t>(spec.layers));
  {
    const int base = spec.roads / spec.layers;
    const int extra = spec.roads % spec.layers;
    RoadId next = 1;
    for (int l = 0; l < spec.layers; ++l) {
      const int size = base + (l < extra ? 1 : 0);
      for (int i = 0; i < size; ++i) layers[static_cast<std::size_t>(l)].push_back(next++);
    }
  }

  std::vector<RoadId> roads;
  for (const auto& layer : layers) roads.insert(roads.end(), layer.begin(), layer.end());

  // Wire each non-root road to 1..max_parents roads of the previous layer.
  std::map<RoadId, std::vector<RoadId>> parents;
  std::vector<std::pair<RoadId, RoadId>> edges;
  for (std::size_t l = 1; l < layers.size(); ++l) {
    for (RoadId child : layers[l]) {
      std::vector<RoadId> pool = layers[l - 1];
      const std::uint64_t cap = std::min<std::uint64_t>(static_cast<std::uint64_t>(spec.max_parents),
                                                        pool.size());
      const std::size_t n_par = static_cast<std::size_t>(1 + rng.below(cap));
      rng.shuffle(pool);
      pool.resize(n_par);
      std::sort(pool.begin(), pool.end());
      for (RoadId p : pool) edges.emplace_back(p, child);
      parents.emplace(child, std::move(pool));
    }
  }

  SynthResult result;
  result.net = build_network(roads, edges);

  // Per-road dynamics. Every road gets a mean level; roots add a daily
  // sinusoid, deeper roads contract toward a linear blend of their parents
  // (weights sum below 1, so the intercept pins the fixed point at the mean).
  std::map<RoadId, double> mean, amp, phase;
  for (RoadId r : roads) {
    mean[r] = rng.uniform(30.0, 80.0);
    if (!parents.count(r)) {
      amp[r] = rng.uniform(3.0, 8.0);
      phase[r] = rng.uniform(0.0, 24.0);
    } else {
      const double strength = rng.uniform(0.6, 0.9);
      const auto& ps = parents[r];
      std::vector<double> raw(ps.size());
      double raw_sum = 0.0;
      for (double& x : raw) {
        x = rng.uniform(0.5, 1.5);
        raw_sum += x;
      }
      double weighted_mean = 0.0;
      for (std::size_t i = 0; i < ps.size(); ++i) {
        const double w = strength * raw[i] / raw_sum;
        result.weights[r][ps[i]] = w;
        weighted_mean += w * mean[ps[i]];
      }
      result.intercepts[r] = mean[r] - weighted_mean;
    }
  }

  result.store.interval_seconds = 3600;
  result.store.start_epoch_seconds = 1577836800;  // 2020-01-01T00:00:00Z
  for (RoadId r : roads) result.store.series[r] = {};

  for (int t = 0; t < spec.steps; ++t) {
    for (RoadId r : roads) {
      const double noise = rng.uniform(-spec.noise, spec.noise);
      double v;
      if (!parents.count(r)) {
        v = mean[r] +
            amp[r] * std::sin(2.0 * std::numbers::pi * (static_cast<double>(t) + phase[r]) / 24.0) +
            noise;
      } else if (t == 0) {
        v = mean[r] + noise;
      } else {
        v = result.intercepts[r];
        for (const auto& [p, w] : result.weights[r])
          v += w * result.store.series[p][static_cast<std::size_t>(t - 1)];
        v += noise;
      }
      result.store.series[r].push_back(std::max(v, 1.0));
    }
  }
  return result;
}

// ---- dataset cache ----------------------------------------------------------------

namespace {

constexpr char kCacheMagic[4] = {'I', 'R', 'D', 'S'};
constexpr std::uint16_t kCacheVersion = 1;

void require_sample_shape(const DatasetCache& cache, const Sample& s) {
  bool ok = s.t >= 0 && s.s_tar.size() == cache.h && s.labels.size() == cache.P &&
            s.um.size() == static_cast<std::size_t>(cache.w) &&
            s.dm.size() == static_cast<std::size_t>(cache.w);
  for (int d = 1; ok && d <= cache.w; ++d) {
    const Eigen::Index rows = pow_k(cache.k, d);
    ok = s.um[static_cast<std::size_t>(d - 1)].rows() == rows &&
         s.um[static_cast<std::size_t>(d - 1)].cols() == cache.h &&
         s.dm[static_cast<std::size_t>(d - 1)].rows() == rows &&
         s.dm[static_cast<std::size_t>(d - 1)].cols() == cache.h;
  }
  if (!ok) raise(Errc::shape_mismatch, "sample does not match the cache's h/P/k/w header");
}

void write_matrix(binio::ByteWriter& w, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
}

Eigen::MatrixXd read_matrix(binio::ByteReader& r, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double v = r.f64();
      if (!std::isfinite(v)) raise(Errc::bad_config, "dataset cache holds a non-finite value");
      m(i, j) = v;
    }
  return m;
}

}  // namespace

void save_dataset_cache(const DatasetCache& cache, const std::string& path) {
  if (cache.h < 1 || cache.P < 1 || cache.k < 1 || cache.w < 1)
    raise(Errc::bad_config, "cache header needs h, P, k, w all >= 1");
  binio::ByteWriter w;
  w.bytes(kCacheMagic, sizeof kCacheMagic);
  w.u16(kCacheVersion);
  w.u32(static_cast<std::uint32_t>(cache.h));
  w.u32(static_cast<std::uint32_t>(cache.P));
  w.u32(static_cast<std::uint32_t>(cache.k));
  w.u32(static_cast<std::uint32_t>(cache.w));
  w.u64(cache.samples.size());
  for (const Sample& s : cache.samples) {
    require_sample_shape(cache, s);
    w.u64(static_cast<std::uint64_t>(s.t));
    for (Eigen::Index i = 0; i < s.s_tar.size(); ++i) w.f64(s.s_tar[i]);
    for (const auto& m : s.um) write_matrix(w, m);
    for (const auto& m : s.dm) write_matrix(w, m);
    for (Eigen::Index i = 0; i < s.labels.size(); ++i) w.f64(s.labels[i]);
  }
  binio::write_file(path, w.buffer());
}

DatasetCache load_dataset_cache(const std::string& path) {
  const std::string data = binio::read_file(path);
  binio::ByteReader r(data, "dataset cache " + path);
  if (r.bytes(4) != std::string_view(kCacheMagic, 4))
    raise(Errc::bad_config, path + " is not a dataset cache (bad magic)");
  const std::uint16_t version = r.u16();
  if (version > kCacheVersion)
    raise(Errc::version_mismatch, path + " has cache version " + std::to_string(version) +
                                      ", newest supported is " + std::to_string(kCacheVersion));
  DatasetCache cache;
  cache.h = static_cast<int>(r.u32());
  cache.P = static_cast<int>(r.u32());
  cache.k = static_cast<int>(r.u32());
  cache.w = static_cast<int>(r.u32());
  if (cache.h < 1 || cache.P < 1 || cache.k < 1 || cache.w < 1)
    raise(Errc::bad_config, path + ": cache header needs h, P, k, w all >= 1");
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    Sample s;
    s.t = static_cast<Eigen::Index>(r.u64());
    s.s_tar = read_matrix(r, cache.h, 1).col(0);
    for (int d = 1; d <= cache.w; ++d) s.um.push_back(read_matrix(r, pow_k(cache.k, d), cache.h));
    for (int d = 1; d <= cache.w; ++d) s.dm.push_back(read_matrix(r, pow_k(cache.k, d), cache.h));
    s.labels = read_matrix(r, cache.P, 1).col(0);
    cache.samples.push_back(std::move(s));
  }
  if (!r.exhausted()) raise(Errc::bad_config, path + ": trailing bytes after the last sample");
  return cache;
}

}  // namespace irnet
