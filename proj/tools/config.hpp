#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace advforge::cli {

/// Schema or syntax problem in a config; maps to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Parsed JSON plus the source line of every key and array element.
class LocatedJson {
 public:
  /// Throws ConfigError with the failing line on syntax errors or duplicate keys.
  static LocatedJson parse(const std::string& text, std::string source);
  static LocatedJson load(const std::filesystem::path& path);

  /// "a.b.c=value"; the value is parsed as JSON, falling back to a string.
  void apply_override(const std::string& assignment);

  const nlohmann::json& root() const noexcept { return root_; }
  const std::string& source() const noexcept { return source_; }
  std::filesystem::path base_dir() const;
  /// "file:line" (or the override that set it) for a JSON pointer.
  std::string where(const std::string& pointer) const;

 private:
  nlohmann::json root_;
  std::string source_;
  std::map<std::string, int> lines_;
  std::map<std::string, std::string> overrides_;
};

/// Read-only view of one value with schema helpers. Every failure names the
/// location of the offending value.
class Node {
 public:
  Node(const LocatedJson& doc, const nlohmann::json& value, std::string pointer)
      : doc_(&doc), value_(&value), pointer_(std::move(pointer)) {}

  [[noreturn]] void fail(const std::string& message) const;

  const nlohmann::json& value() const noexcept { return *value_; }
  const std::string& pointer() const noexcept { return pointer_; }
  const LocatedJson& doc() const noexcept { return *doc_; }

  bool is_object() const { return value_->is_object(); }
  bool has(std::string_view key) const;
  Node at(std::string_view key) const;
  std::optional<Node> find(std::string_view key) const;
  std::vector<Node> items() const;
  /// Rejects keys outside `allowed`.
  void allow_only(std::initializer_list<std::string_view> allowed) const;
  void expect_object() const;

  double as_double() const;
  std::int64_t as_int() const;
  std::uint64_t as_uint() const;
  bool as_bool() const;
  std::string as_string() const;
  std::vector<double> as_doubles() const;
  std::vector<std::string> as_strings() const;
  /// Relative paths resolve against the config file's directory.
  std::filesystem::path as_path() const;

  double get(std::string_view key, double fallback) const;
  int get(std::string_view key, int fallback) const;
  bool get(std::string_view key, bool fallback) const;
  std::string get(std::string_view key, const char* fallback) const;

 private:
  const LocatedJson* doc_;
  const nlohmann::json* value_;
  std::string pointer_;
};

inline Node root_node(const LocatedJson& doc) { return Node(doc, doc.root(), ""); }

}  // namespace advforge::cli
