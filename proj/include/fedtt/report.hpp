#pragma once

// Communication-cost table: per-round uplink, total over rounds, and the
// total relative to a reference method.

#include <string>
#include <string_view>
#include <vector>

namespace fedtt {

struct CommInput {
  std::string method;
  double params = 0.0;
  double rounds = 0.0;
};

struct CommRow {
  std::string method;
  double params = 0.0;
  double rounds = 0.0;
  double uplink_kb = 0.0;
  double total_kb = 0.0;
  double ratio = 0.0;
};

// KB = 1024 bytes. Throws ConfigError on non-positive counts, an unknown
// reference, or a reference with zero total.
std::vector<CommRow> comm_report(const std::vector<CommInput>& rows, double bytes_per_param,
                                 std::string_view reference);

// CSV with header "method,params,rounds".
std::vector<CommInput> parse_comm_table(std::string_view csv);
std::string format_comm_report(const std::vector<CommRow>& rows);

}  // namespace fedtt
