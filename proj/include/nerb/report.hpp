#pragma once

#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace nerb {

/// 12 significant digits, '.' separator, independent of the global locale.
inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  std::string out(buf);
  for (auto& ch : out)
    if (ch == ',') ch = '.';
  return out;
}

enum class CheckStatus { pass, fail, vacuous };

inline const char* to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::fail: return "fail";
    case CheckStatus::vacuous: return "vacuous";
  }
  return "?";
}

/// One executable check: what was measured against which threshold.
struct CheckRecord {
  std::string name;
  std::string property;
  CheckStatus status = CheckStatus::fail;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

inline CheckRecord make_check(std::string name, std::string property, bool ok, double value,
                              double threshold, std::string detail = {}) {
  return {std::move(name), std::move(property), ok ? CheckStatus::pass : CheckStatus::fail, value,
          threshold, std::move(detail)};
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

inline void write_report_csv(std::ostream& os, const std::vector<CheckRecord>& records) {
  os << "name,property,status,value,threshold,detail\n";
  for (const auto& r : records)
    os << detail::csv_field(r.name) << ',' << detail::csv_field(r.property) << ',' << to_string(r.status)
       << ',' << format_number(r.value) << ',' << format_number(r.threshold) << ','
       << detail::csv_field(r.detail) << '\n';
}

inline std::string format_report_text(const std::vector<CheckRecord>& records) {
  std::ostringstream os;
  for (const auto& r : records) {
    os << "[" << to_string(r.status) << "] " << r.name << ": " << format_number(r.value)
       << " (threshold " << format_number(r.threshold) << ")";
    if (!r.detail.empty()) os << "  " << r.detail;
    os << "\n    " << r.property << "\n";
  }
  return os.str();
}

inline bool all_passed(const std::vector<CheckRecord>& records) {
  for (const auto& r : records)
    if (r.status == CheckStatus::fail) return false;
  return true;
}

}  // namespace nerb
