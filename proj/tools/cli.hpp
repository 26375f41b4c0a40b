#pragma once

#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

namespace eisam::cli {

nlohmann::json default_config();
// Overrides applied by `--profile smoke`.
nlohmann::json smoke_profile();

// Recursively merges `patch` into `base`. Keys missing from `base` and
// values whose JSON type differs from the default raise InvalidConfig.
void merge_config(nlohmann::json& base, const nlohmann::json& patch, const std::string& where = "");

// "section.key=value"; value is parsed as JSON, falling back to a string.
void apply_set(nlohmann::json& cfg, const std::string& assignment);

// Entry point shared by the executable and the tests. `args` excludes the
// program name. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace eisam::cli
