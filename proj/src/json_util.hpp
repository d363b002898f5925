#pragma once

// JSON input helpers that report problems as "<source>:<line>: <message>".

#include <cstddef>
#include <string>

#include "json.hpp"
#include "pwmini/error.hpp"

namespace pwmini::detail {

using nlohmann::json;

inline std::size_t line_at(const std::string& text, std::size_t byte_pos) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte_pos && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

// Line of the first occurrence of "key" as a quoted string; 1 if absent.
inline std::size_t line_of_key(const std::string& text, const std::string& key) {
  const auto pos = text.find('"' + key + '"');
  return pos == std::string::npos ? 1 : line_at(text, pos);
}

class JsonDoc {
 public:
  JsonDoc(std::string text, std::string source) : text_(std::move(text)), source_(std::move(source)) {
    try {
      root_ = json::parse(text_);
    } catch (const json::parse_error& e) {
      const std::size_t at = e.byte > 0 ? e.byte - 1 : 0;
      std::string msg = e.what();
      if (const auto p = msg.find("syntax error"); p != std::string::npos) msg = msg.substr(p);
      throw InvalidArgument(source_ + ":" + std::to_string(line_at(text_, at)) + ": " + msg);
    }
    if (!root_.is_object()) fail("", "top level must be a JSON object");
  }

  const json& root() const { return root_; }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw InvalidArgument(source_ + ":" + std::to_string(key.empty() ? 1 : line_of_key(text_, key)) + ": " + msg);
  }

  const json& require(const json& obj, const std::string& key) const {
    auto it = obj.find(key);
    if (it == obj.end()) fail(key, "missing required key \"" + key + "\"");
    return *it;
  }

  double number(const json& v, const std::string& key) const {
    if (!v.is_number()) fail(key, "\"" + key + "\" must be a number");
    return v.get<double>();
  }

  std::int64_t integer(const json& v, const std::string& key) const {
    if (!v.is_number_integer()) fail(key, "\"" + key + "\" must be an integer");
    return v.get<std::int64_t>();
  }

  bool boolean(const json& v, const std::string& key) const {
    if (!v.is_boolean()) fail(key, "\"" + key + "\" must be true or false");
    return v.get<bool>();
  }

  std::string string(const json& v, const std::string& key) const {
    if (!v.is_string()) fail(key, "\"" + key + "\" must be a string");
    return v.get<std::string>();
  }

  template <typename F>
  void optional(const json& obj, const std::string& key, F&& read) const {
    if (auto it = obj.find(key); it != obj.end()) read(*it);
  }

  void reject_unknown(const json& obj, std::initializer_list<const char*> known) const {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      bool ok = false;
      for (const char* k : known) ok = ok || it.key() == k;
      if (!ok) fail(it.key(), "unknown key \"" + it.key() + "\"");
    }
  }

 private:
  std::string text_;
  std::string source_;
  json root_;
};

}  // namespace pwmini::detail
