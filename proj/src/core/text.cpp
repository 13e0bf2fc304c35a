#include "engage/text.hpp"

#include <cctype>

#include "engage/error.hpp"

namespace engage::text {

namespace {
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
}  // namespace

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find('\n', start);
    if (end == std::string_view::npos) end = s.size();
    std::string line(s.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(std::move(line));
    start = end + 1;
  }
  return out;
}

std::string squash_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::string normalize(std::string_view s) {
  std::string out = to_lower(squash_whitespace(s));
  auto is_quote = [](char c) { return c == '"' || c == '\'' || c == '`'; };
  while (out.size() >= 2 && is_quote(out.front()) && is_quote(out.back())) {
    out = trim(out.substr(1, out.size() - 2));
  }
  return out;
}

std::size_t count_placeholder(std::string_view tmpl, std::string_view name) {
  const std::string needle = "{" + std::string(name) + "}";
  std::size_t count = 0;
  for (auto pos = tmpl.find(needle); pos != std::string_view::npos;
       pos = tmpl.find(needle, pos + needle.size())) {
    ++count;
  }
  return count;
}

std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    if (count_placeholder(tmpl, key) != 1) {
      throw Error(ErrorKind::ValidationError,
                  "template must contain {" + key + "} exactly once");
    }
  }
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      auto close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        std::string key(tmpl.substr(i + 1, close - i - 1));
        auto it = values.find(key);
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
        throw Error(ErrorKind::ValidationError, "unfilled placeholder {" + key + "}");
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

std::size_t find_word(std::string_view haystack, std::string_view word) {
  if (word.empty() || haystack.size() < word.size()) return std::string_view::npos;
  const std::string hay = to_lower(haystack);
  const std::string w = to_lower(word);
  for (auto pos = hay.find(w); pos != std::string::npos; pos = hay.find(w, pos + 1)) {
    const bool left_ok = pos == 0 || !is_word(hay[pos - 1]);
    const bool right_ok = pos + w.size() == hay.size() || !is_word(hay[pos + w.size()]);
    if (left_ok && right_ok) return pos;
  }
  return std::string_view::npos;
}

}  // namespace engage::text
