#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace tmr {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigKey {
    std::string key;
    std::string default_value;
    std::string help;
};

/// Every recognized key with its default, in declaration order.
const std::vector<ConfigKey>& config_schema();

/// Flat key=value configuration. All keys have defaults; files and flag
/// overrides may only touch keys in the schema (unknown keys are an error).
class Config {
  public:
    static Config defaults();

    void load_file(const std::filesystem::path& path);  // '#' comments, blank lines ignored
    void set(const std::string& key, const std::string& value);
    bool has_default(const std::string& key) const;  // value still at its default

    const std::string& get(const std::string& key) const;
    long get_long(const std::string& key) const;
    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    std::string hash() const;  // FNV-1a over the sorted resolved key=value list
    std::string echo() const;  // sorted "key=value" lines
    const std::map<std::string, std::string>& values() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
    std::map<std::string, bool> overridden_;
};

}  // namespace tmr
