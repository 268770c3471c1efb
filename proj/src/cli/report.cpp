#include "fedtt/report.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fedtt/error.hpp"

namespace fedtt {

std::vector<CommRow> comm_report(const std::vector<CommInput>& rows, double bytes_per_param,
                                 std::string_view reference) {
  if (!(bytes_per_param > 0.0)) throw ConfigError("bytes per parameter must be > 0");
  std::vector<CommRow> out;
  const CommRow* ref = nullptr;
  for (const auto& r : rows) {
    if (!(r.params > 0.0) || !(r.rounds > 0.0))
      throw ConfigError("method '" + r.method + "' needs positive params and rounds");
    CommRow c{r.method, r.params, r.rounds, 0.0, 0.0, 0.0};
    c.uplink_kb = r.params * bytes_per_param / 1024.0;
    c.total_kb = c.uplink_kb * r.rounds;
    out.push_back(c);
  }
  for (const auto& c : out)
    if (c.method == reference) ref = &c;
  if (!ref) throw ConfigError("reference method '" + std::string(reference) + "' not in table");
  if (!(ref->total_kb > 0.0)) throw ConfigError("reference method has zero total");
  const double denom = ref->total_kb;
  for (auto& c : out) c.ratio = c.total_kb / denom;
  return out;
}

std::vector<CommInput> parse_comm_table(std::string_view csv) {
  std::vector<CommInput> rows;
  std::istringstream in{std::string(csv)};
  std::string line;
  std::size_t line_no = 0;
  auto num = [&](const std::string& s, const char* col) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw ConfigError("table line " + std::to_string(line_no) + ": bad " + col + " '" + s + "'");
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "method,params,rounds")
        throw ConfigError("table header must be 'method,params,rounds'");
      continue;
    }
    std::istringstream ls(line);
    std::string method, params, rounds, extra;
    if (!std::getline(ls, method, ',') || !std::getline(ls, params, ',') ||
        !std::getline(ls, rounds, ',') || std::getline(ls, extra, ','))
      throw ConfigError("table line " + std::to_string(line_no) + ": expected 3 columns");
    rows.push_back({method, num(params, "params"), num(rounds, "rounds")});
  }
  if (rows.empty()) throw ConfigError("communication table has no rows");
  return rows;
}

std::string format_comm_report(const std::vector<CommRow>& rows) {
  std::string out = "method,params,rounds,uplink_kb,total_kb,ratio\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.0f,%g,%.1f,%.1f,%.3f\n", r.method.c_str(), r.params,
                  r.rounds, r.uplink_kb, r.total_kb, r.ratio);
    out += buf;
  }
  return out;
}

}  // namespace fedtt
