#pragma once

#include <map>
#include <string>

#include "vle/errors.hpp"

namespace vle {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered flat key/value table.
using KeyValues = std::map<std::string, std::string>;

/// Parses a flat TOML subset: `key = value` lines, `#` comments, optional
/// double quotes around values, dotted keys kept verbatim. Section headers
/// `[name]` prefix following keys with `name.`.
KeyValues parse_key_values(const std::string& text);
KeyValues load_key_values(const std::string& path);
std::string format_key_values(const KeyValues& kv);

int64_t kv_int(const std::string& key, const std::string& value);
double kv_double(const std::string& key, const std::string& value);
bool kv_bool(const std::string& key, const std::string& value);

}  // namespace vle
