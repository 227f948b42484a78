#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace matchctl {

inline constexpr double kDefaultTolerance = 1e-8;

enum class CheckKind { at_most, greater_than, info, skipped };

inline const char* to_string(CheckKind k) {
  switch (k) {
    case CheckKind::at_most: return "at_most";
    case CheckKind::greater_than: return "greater_than";
    case CheckKind::info: return "info";
    case CheckKind::skipped: return "skipped";
  }
  return "?";
}

// One named check. For at_most entries `normalized` = raw / max(1, scale) is
// compared with `tolerance`; for greater_than entries `raw` must exceed it.
struct ResidualEntry {
  std::string name;
  CheckKind kind = CheckKind::at_most;
  double raw = 0.0;
  double scale = 0.0;
  double normalized = 0.0;
  double tolerance = kDefaultTolerance;
  bool pass = true;
  std::string note;
};

inline double normalize_residual(double raw, double scale) { return std::abs(raw) / std::max(1.0, std::abs(scale)); }

class ResidualReport {
 public:
  ResidualReport() = default;
  explicit ResidualReport(std::string title) : title_(std::move(title)) {}

  const std::string& title() const { return title_; }
  const std::vector<ResidualEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  ResidualEntry& add_residual(const std::string& name, double raw, double scale, double tol = kDefaultTolerance) {
    ResidualEntry e;
    e.name = name;
    e.raw = std::abs(raw);
    e.scale = std::abs(scale);
    e.normalized = normalize_residual(raw, scale);
    e.tolerance = tol;
    e.pass = std::isfinite(e.normalized) && e.normalized <= tol;
    return push(std::move(e));
  }

  ResidualEntry& add_lower_bound(const std::string& name, double value, double bound) {
    ResidualEntry e;
    e.name = name;
    e.kind = CheckKind::greater_than;
    e.raw = value;
    e.normalized = value;
    e.tolerance = bound;
    e.pass = std::isfinite(value) && value > bound;
    return push(std::move(e));
  }

  ResidualEntry& add_info(const std::string& name, double value, std::string note = {}) {
    ResidualEntry e;
    e.name = name;
    e.kind = CheckKind::info;
    e.raw = value;
    e.normalized = value;
    e.note = std::move(note);
    return push(std::move(e));
  }

  ResidualEntry& add_skipped(const std::string& name, std::string reason) {
    ResidualEntry e;
    e.name = name;
    e.kind = CheckKind::skipped;
    e.note = std::move(reason);
    return push(std::move(e));
  }

  bool pass() const {
    return std::all_of(entries_.begin(), entries_.end(), [](const ResidualEntry& e) { return e.pass; });
  }

  const ResidualEntry* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  double normalized(const std::string& name) const {
    const auto* e = find(name);
    return e ? e->normalized : NAN;
  }

  // Worst-case merge: largest residual, smallest lower-bounded value, smallest info value.
  void merge_max(const ResidualReport& other) {
    for (const auto& o : other.entries_) {
      ResidualEntry* mine = find_mut(o.name);
      if (!mine) {
        entries_.push_back(o);
        continue;
      }
      switch (o.kind) {
        case CheckKind::at_most: {
          const bool keep = mine->pass && o.pass;
          if (!(o.normalized <= mine->normalized)) *mine = o;
          mine->pass = keep;
          break;
        }
        case CheckKind::greater_than:
        case CheckKind::info:
          if (!(o.raw >= mine->raw)) {
            const bool keep = mine->pass && o.pass;
            *mine = o;
            mine->pass = keep;
          }
          break;
        case CheckKind::skipped:
          break;
      }
    }
  }

  std::string to_text() const {
    std::string out;
    if (!title_.empty()) out += title_ + "\n";
    char buf[256];
    for (const auto& e : entries_) {
      const char* verdict = e.kind == CheckKind::skipped ? "skip" : (e.kind == CheckKind::info ? "info" : (e.pass ? "ok" : "FAIL"));
      switch (e.kind) {
        case CheckKind::at_most:
          std::snprintf(buf, sizeof buf, "  %-28s %-4s normalized=%.3e raw=%.3e tol=%.1e", e.name.c_str(), verdict,
                        e.normalized, e.raw, e.tolerance);
          break;
        case CheckKind::greater_than:
          std::snprintf(buf, sizeof buf, "  %-28s %-4s value=%.6g > %.6g", e.name.c_str(), verdict, e.raw, e.tolerance);
          break;
        case CheckKind::info:
          std::snprintf(buf, sizeof buf, "  %-28s %-4s value=%.6g", e.name.c_str(), verdict, e.raw);
          break;
        case CheckKind::skipped:
          std::snprintf(buf, sizeof buf, "  %-28s %-4s", e.name.c_str(), verdict);
          break;
      }
      out += buf;
      if (!e.note.empty()) out += "  (" + e.note + ")";
      out += "\n";
    }
    out += pass() ? "  => pass\n" : "  => FAIL\n";
    return out;
  }

 private:
  ResidualEntry& push(ResidualEntry e) {
    if (ResidualEntry* existing = find_mut(e.name)) {
      *existing = std::move(e);
      return *existing;
    }
    entries_.push_back(std::move(e));
    return entries_.back();
  }

  ResidualEntry* find_mut(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  std::string title_;
  std::vector<ResidualEntry> entries_;
};

}  // namespace matchctl
