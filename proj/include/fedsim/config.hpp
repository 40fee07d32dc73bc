#ifndef FEDSIM_CONFIG_HPP
#define FEDSIM_CONFIG_HPP

#include <map>
#include <string>
#include <vector>

namespace fedsim {

// Structured key-value configuration text. Two equivalent spellings:
//
//   [dp]
//   enabled = true
//   sigma = 3
//
//   dp.enabled = true        # dotted keys at top level
//
// '#' starts a comment; values are trimmed strings. Lists are comma separated.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::string& path);
  static KeyValueConfig parse_string(const std::string& text);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const;

  void set(const std::string& key, const std::string& value);

  // Keys present in the file but never consumed; used to reject typos.
  std::vector<std::string> unused_keys() const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> consumed_;
};

}  // namespace fedsim

#endif  // FEDSIM_CONFIG_HPP
