#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "piba/error.hpp"
#include "piba/evalsuite/metrics.hpp"
#include "json.hpp"

namespace piba::cli {

// 2 for configuration problems, 3 for missing or unreadable artifacts, 4 for
// numeric failures.
int exit_code_for(ErrorKind kind);

nlohmann::json to_json(const eval::EvalReport& report);
// `x,y` header then one row per point.
std::string curve_csv(const eval::Curve& curve);

// Runs one command line (without the program name) and returns the exit status.
// Failures print {"error": {...}} as one JSON line on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace piba::cli
