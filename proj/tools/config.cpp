#include "config.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <iterator>
#include <sstream>

namespace advforge::cli {

namespace {

using nlohmann::json;

// Character iterator that counts the newlines it has consumed.
struct CountingIterator {
  using iterator_category = std::input_iterator_tag;
  using value_type = char;
  using difference_type = std::ptrdiff_t;
  using pointer = const char*;
  using reference = const char&;

  const char* p = nullptr;
  int* line = nullptr;

  reference operator*() const { return *p; }
  CountingIterator& operator++() {
    if (*p == '\n') ++*line;
    ++p;
    return *this;
  }
  CountingIterator operator++(int) {
    auto old = *this;
    ++*this;
    return old;
  }
  bool operator==(const CountingIterator& o) const { return p == o.p; }
  bool operator!=(const CountingIterator& o) const { return p != o.p; }
};

std::string escape_token(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

// DOM builder that also records the line of each key and array element.
class LocatingSax {
 public:
  LocatingSax(json& root, const int* line, std::map<std::string, int>& lines) : dom_(root, false), line_(line), lines_(lines) {}

  bool null() { return scalar([&] { return dom_.null(); }); }
  bool boolean(bool v) { return scalar([&] { return dom_.boolean(v); }); }
  bool number_integer(json::number_integer_t v) { return scalar([&] { return dom_.number_integer(v); }); }
  bool number_unsigned(json::number_unsigned_t v) { return scalar([&] { return dom_.number_unsigned(v); }); }
  bool number_float(json::number_float_t v, const std::string& s) {
    return scalar([&] { return dom_.number_float(v, s); });
  }
  bool string(std::string& v) { return scalar([&] { return dom_.string(v); }); }
  bool binary(json::binary_t& v) { return scalar([&] { return dom_.binary(v); }); }

  bool start_object(std::size_t n) {
    begin_value();
    frames_.push_back({false, 0, ""});
    return dom_.start_object(n);
  }
  bool key(std::string& k) {
    frames_.back().key = escape_token(k);
    const std::string ptr = pointer();
    if (!lines_.emplace(ptr, *line_ + 1).second) {
      duplicate_ = ptr;
      return false;
    }
    return dom_.key(k);
  }
  bool end_object() {
    frames_.pop_back();
    end_value();
    return dom_.end_object();
  }
  bool start_array(std::size_t n) {
    begin_value();
    frames_.push_back({true, 0, ""});
    return dom_.start_array(n);
  }
  bool end_array() {
    frames_.pop_back();
    end_value();
    return dom_.end_array();
  }
  bool parse_error(std::size_t pos, const std::string&, const nlohmann::detail::exception& ex) {
    error_pos_ = pos;
    error_ = ex.what();
    return false;
  }

  const std::string& duplicate() const noexcept { return duplicate_; }
  const std::string& error() const noexcept { return error_; }
  std::size_t error_pos() const noexcept { return error_pos_; }

 private:
  struct Frame {
    bool array;
    std::size_t index;
    std::string key;
  };

  template <typename Fn>
  bool scalar(Fn&& fn) {
    begin_value();
    const bool ok = fn();
    end_value();
    return ok;
  }
  std::string pointer() const {
    std::string out;
    for (const auto& f : frames_) out += "/" + (f.array ? std::to_string(f.index) : f.key);
    return out;
  }
  void begin_value() {
    if (!frames_.empty() && frames_.back().array) lines_.emplace(pointer(), *line_ + 1);
  }
  void end_value() {
    if (!frames_.empty() && frames_.back().array) ++frames_.back().index;
  }

  nlohmann::detail::json_sax_dom_parser<json> dom_;
  const int* line_;
  std::map<std::string, int>& lines_;
  std::vector<Frame> frames_;
  std::string duplicate_;
  std::string error_;
  std::size_t error_pos_ = 0;
};

std::string parent_pointer(const std::string& p) {
  const auto pos = p.rfind('/');
  return pos == std::string::npos ? std::string{} : p.substr(0, pos);
}

}  // namespace

LocatedJson LocatedJson::parse(const std::string& text, std::string source) {
  LocatedJson doc;
  doc.source_ = std::move(source);
  int line = 0;
  CountingIterator first{text.data(), &line}, last{text.data() + text.size(), &line};
  LocatingSax sax(doc.root_, &line, doc.lines_);
  const bool ok = json::sax_parse(first, last, &sax);
  if (!sax.error().empty()) {
    const std::size_t byte = std::min(sax.error_pos(), text.size());
    const auto n = std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte > 0 ? byte - 1 : 0), '\n');
    const std::string& what = sax.error();
    const auto at = what.find("syntax error");
    throw ConfigError(doc.source_ + ":" + std::to_string(n + 1) + ": " +
                      (at == std::string::npos ? what : what.substr(at)));
  }
  if (!sax.duplicate().empty()) {
    throw ConfigError(doc.source_ + ":" + std::to_string(line + 1) + ": duplicate key " + sax.duplicate());
  }
  if (!ok) throw ConfigError(doc.source_ + ": invalid JSON");
  if (!doc.root_.is_object()) throw ConfigError(doc.source_ + ":1: config must be a JSON object");
  return doc;
}

LocatedJson LocatedJson::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void LocatedJson::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set " + assignment + ": expected key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &root_;
  std::string pointer;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("--set " + assignment + ": empty key segment");
    pointer += "/" + escape_token(key);
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(key);
      } catch (const std::exception&) {
        throw ConfigError("--set " + assignment + ": '" + key + "' is not an array index");
      }
      if (idx >= node->size()) throw ConfigError("--set " + assignment + ": index " + key + " out of range");
      node = &(*node)[idx];
    } else {
      if (node->is_null()) *node = json::object();
      if (!node->is_object()) throw ConfigError("--set " + assignment + ": cannot descend into a scalar");
      node = &(*node)[key];
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
  overrides_[pointer] = "--set " + path;
}

std::filesystem::path LocatedJson::base_dir() const {
  const auto p = std::filesystem::path(source_).parent_path();
  return p.empty() ? std::filesystem::path(".") : p;
}

std::string LocatedJson::where(const std::string& pointer) const {
  for (std::string p = pointer;; p = parent_pointer(p)) {
    if (auto it = overrides_.find(p); it != overrides_.end()) return it->second;
    if (auto it = lines_.find(p); it != lines_.end()) return source_ + ":" + std::to_string(it->second);
    if (p.empty()) break;
  }
  return source_;
}

// ---------------------------------------------------------------------------
// Node
// ---------------------------------------------------------------------------

void Node::fail(const std::string& message) const {
  throw ConfigError(doc_->where(pointer_) + ": " + (pointer_.empty() ? std::string("/") : pointer_) + ": " + message);
}

void Node::expect_object() const {
  if (!value_->is_object()) fail("expected an object");
}

bool Node::has(std::string_view key) const { return value_->is_object() && value_->contains(std::string(key)); }

Node Node::at(std::string_view key) const {
  expect_object();
  const std::string k(key);
  if (!value_->contains(k)) fail("missing required key '" + k + "'");
  return Node(*doc_, (*value_)[k], pointer_ + "/" + escape_token(k));
}

std::optional<Node> Node::find(std::string_view key) const {
  if (!has(key)) return std::nullopt;
  return at(key);
}

std::vector<Node> Node::items() const {
  if (!value_->is_array()) fail("expected an array");
  std::vector<Node> out;
  for (std::size_t i = 0; i < value_->size(); ++i) out.emplace_back(*doc_, (*value_)[i], pointer_ + "/" + std::to_string(i));
  return out;
}

void Node::allow_only(std::initializer_list<std::string_view> allowed) const {
  expect_object();
  for (const auto& [k, v] : value_->items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == k;
    if (!ok) Node(*doc_, v, pointer_ + "/" + escape_token(k)).fail("unknown key '" + k + "'");
  }
}

double Node::as_double() const {
  if (!value_->is_number()) fail("expected a number");
  return value_->get<double>();
}

std::int64_t Node::as_int() const {
  if (!value_->is_number_integer()) fail("expected an integer");
  return value_->get<std::int64_t>();
}

std::uint64_t Node::as_uint() const {
  if (!value_->is_number_integer() || (value_->is_number_integer() && !value_->is_number_unsigned())) {
    fail("expected a non-negative integer");
  }
  return value_->get<std::uint64_t>();
}

bool Node::as_bool() const {
  if (!value_->is_boolean()) fail("expected true or false");
  return value_->get<bool>();
}

std::string Node::as_string() const {
  if (!value_->is_string()) fail("expected a string");
  return value_->get<std::string>();
}

std::vector<double> Node::as_doubles() const {
  std::vector<double> out;
  for (const auto& n : items()) out.push_back(n.as_double());
  return out;
}

std::vector<std::string> Node::as_strings() const {
  std::vector<std::string> out;
  for (const auto& n : items()) out.push_back(n.as_string());
  return out;
}

std::filesystem::path Node::as_path() const {
  const std::filesystem::path p(as_string());
  return p.is_absolute() ? p : doc_->base_dir() / p;
}

double Node::get(std::string_view key, double fallback) const {
  return has(key) ? at(key).as_double() : fallback;
}

int Node::get(std::string_view key, int fallback) const {
  if (!has(key)) return fallback;
  const Node n = at(key);
  const auto v = n.as_int();
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) n.fail("integer out of range");
  return static_cast<int>(v);
}

bool Node::get(std::string_view key, bool fallback) const { return has(key) ? at(key).as_bool() : fallback; }

std::string Node::get(std::string_view key, const char* fallback) const {
  return has(key) ? at(key).as_string() : std::string(fallback);
}

}  // namespace advforge::cli
