#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace searchloop {
namespace text {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool is_alnum(char c) {
  unsigned char u = static_cast<unsigned char>(c);
  return (u >= '0' && u <= '9') || (u >= 'a' && u <= 'z') || (u >= 'A' && u <= 'Z');
}

inline char to_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline std::string lower(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) out.push_back(to_lower(c));
  return out;
}

inline std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

/// Collapse runs of whitespace to single spaces and trim the ends.
inline std::string collapse_ws(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_ws = true;  // leading whitespace is dropped
  for (char c : s) {
    if (is_space(c)) {
      in_ws = true;
    } else {
      if (in_ws && !out.empty()) out.push_back(' ');
      out.push_back(c);
      in_ws = false;
    }
  }
  return out;
}

/// Lowercase and split on runs of non-alphanumeric characters. This is the
/// analysis tokenizer shared by gate signals and lexical scoring: bytes
/// outside [0-9A-Za-z] (including punctuation and any non-ASCII byte) act
/// as separators.
inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (is_alnum(c)) {
      cur.push_back(to_lower(c));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::set<std::string> token_set(std::string_view s) {
  auto toks = tokenize(s);
  return std::set<std::string>(toks.begin(), toks.end());
}

/// Split into whitespace-delimited words, preserving each word's bytes.
inline std::vector<std::string> whitespace_words(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (is_space(c)) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == '\n') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

inline bool contains_ci(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return true;
  if (haystack.size() < needle.size()) return false;
  for (size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    size_t j = 0;
    while (j < needle.size() && to_lower(haystack[i + j]) == to_lower(needle[j])) ++j;
    if (j == needle.size()) return true;
  }
  return false;
}

inline bool starts_with(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (size_t i = 0; i < prefix.size(); ++i) {
    if (to_lower(s[i]) != to_lower(prefix[i])) return false;
  }
  return true;
}

/// Case-fold and trim; the canonical form used when comparing claims and
/// questions for duplicates or resolution matches.
inline std::string fold(std::string_view s) { return lower(trim(s)); }

}  // namespace text
}  // namespace searchloop
