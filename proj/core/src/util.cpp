#include <cmath>
#include <iostream>
#include <mutex>
#include <sstream>

#include "cocodr/error.hpp"
#include "cocodr/log.hpp"
#include "cocodr/matrix.hpp"
#include "cocodr/rng.hpp"

namespace cocodr {

std::size_t Rng::uniform_index(std::size_t n) {
  require(n > 0, "Rng::uniform_index: n must be positive");
  const std::uint64_t bound = n;
  // Rejection keeps the result exactly uniform.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

double Rng::normal() {
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_;
  return out.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream in(state);
  in >> engine_;
  if (!in) throw DataError("Rng::restore: malformed generator state");
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: width mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "squared_distance: width mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

void axpy(double scale, std::span<const double> x, std::span<double> out) {
  require(x.size() == out.size(), "axpy: width mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) out[i] += scale * x[i];
}

std::vector<double> normalized(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  const double n = std::sqrt(squared_norm(v));
  if (n > 0.0)
    for (double& x : out) x /= n;
  return out;
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

namespace log {
namespace {

std::mutex g_mutex;
Level g_min = Level::kInfo;
Sink g_sink;

const char* level_name(Level l) {
  switch (l) {
    case Level::kDebug: return "debug";
    case Level::kInfo: return "info";
    case Level::kWarn: return "warn";
    case Level::kError: return "error";
  }
  return "?";
}

}  // namespace

void set_sink(Sink sink) {
  std::lock_guard lock(g_mutex);
  g_sink = std::move(sink);
}

void set_min_level(Level level) {
  std::lock_guard lock(g_mutex);
  g_min = level;
}

void write(Level level, const std::string& message) {
  std::lock_guard lock(g_mutex);
  if (level < g_min) return;
  if (g_sink) {
    g_sink(level, message);
    return;
  }
  std::cerr << "[cocodr " << level_name(level) << "] " << message << '\n';
}

}  // namespace log
}  // namespace cocodr
