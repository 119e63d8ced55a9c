/* Copyright 2026 The embfuse Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Tokenizer, case mapping and the default lemmatizer.

#include <cstdint>
#include <istream>
#include <memory>
#include <string>
#include <unordered_map>

#include "embfuse/corpus.hpp"

namespace embfuse {

namespace {

struct CodePoint {
  char32_t value;
  std::size_t length;  // bytes consumed
};

// Invalid sequences decode as a single byte so no input is lost.
CodePoint decode_utf8(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  const auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) return {b0, 1};
  if ((b0 & 0xE0) == 0xC0) {
    const int c1 = cont(1);
    if (c1 >= 0) return {static_cast<char32_t>(((b0 & 0x1F) << 6) | c1), 2};
  } else if ((b0 & 0xF0) == 0xE0) {
    const int c1 = cont(1), c2 = cont(2);
    if (c1 >= 0 && c2 >= 0) {
      return {static_cast<char32_t>(((b0 & 0x0F) << 12) | (c1 << 6) | c2), 3};
    }
  } else if ((b0 & 0xF8) == 0xF0) {
    const int c1 = cont(1), c2 = cont(2), c3 = cont(3);
    if (c1 >= 0 && c2 >= 0 && c3 >= 0) {
      return {static_cast<char32_t>(((b0 & 0x07) << 18) | (c1 << 12) | (c2 << 6) | c3), 4};
    }
  }
  return {0xFFFD, 1};
}

void encode_utf8(char32_t cp, std::string& out) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool is_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 ||
         c == 0x1680 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 ||
         c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000;
}

bool is_punct(char32_t c) {
  if (c < 0x80) {
    return c > 0x20 && c < 0x7F &&
           !((c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'));
  }
  switch (c) {
    case 0xA1: case 0xA7: case 0xAB: case 0xB6: case 0xB7: case 0xBB: case 0xBF:
      return true;
    default:
      break;
  }
  return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) ||
         (c >= 0x3001 && c <= 0x3003) || (c >= 0x3008 && c <= 0x3011) ||
         (c >= 0x3014 && c <= 0x301F) || (c >= 0xFE50 && c <= 0xFE6B) ||
         (c >= 0xFF01 && c <= 0xFF0F) || (c >= 0xFF1A && c <= 0xFF20) ||
         (c >= 0xFF3B && c <= 0xFF40) || (c >= 0xFF5B && c <= 0xFF65);
}

bool is_apostrophe(char32_t c) { return c == 0x27 || c == 0x2019; }

bool is_word(char32_t c) { return !is_space(c) && !is_punct(c); }

char32_t lower_cp(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 0x20;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 0x20;
  return c;
}

char32_t upper_cp(char32_t c) {
  if (c >= 'a' && c <= 'z') return c - 0x20;
  if (c >= 0xE0 && c <= 0xFE && c != 0xF7) return c - 0x20;
  return c;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t i = 0;
  while (i < text.size()) {
    const CodePoint cp = decode_utf8(text, i);
    const std::size_t next = i + cp.length;
    bool keep = is_word(cp.value);
    if (!keep && is_apostrophe(cp.value) && !current.empty() && next < text.size()) {
      keep = is_word(decode_utf8(text, next).value);
    }
    if (keep) {
      current.append(text.substr(i, cp.length));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
    i = next;
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string to_lower_utf8(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    const CodePoint cp = decode_utf8(text, i);
    if (cp.value == 0xFFFD && cp.length == 1) {
      out.push_back(text[i]);
    } else {
      encode_utf8(lower_cp(cp.value), out);
    }
    i += cp.length;
  }
  return out;
}

std::string capitalize_utf8(std::string_view text) {
  if (text.empty()) return {};
  const CodePoint first = decode_utf8(text, 0);
  std::string out;
  if (first.value == 0xFFFD && first.length == 1) {
    out.push_back(text[0]);
  } else {
    encode_utf8(upper_cp(first.value), out);
  }
  out += to_lower_utf8(text.substr(first.length));
  return out;
}

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool has_vowel(std::string_view s) {
  return s.find_first_of("aeiouy") != std::string_view::npos;
}

bool is_consonant(char c) {
  return c >= 'a' && c <= 'z' && std::string_view("aeiou").find(c) == std::string_view::npos;
}

std::string undouble(std::string_view stem) {
  const std::size_t n = stem.size();
  if (n >= 2 && stem[n - 1] == stem[n - 2] && is_consonant(stem[n - 1]) &&
      std::string_view("lsz").find(stem[n - 1]) == std::string_view::npos) {
    return std::string(stem.substr(0, n - 1));
  }
  return std::string(stem);
}

}  // namespace

std::string rule_lemmatize(std::string_view w) {
  if (w.size() <= 3) return std::string(w);
  const auto drop = [&](std::size_t k) { return w.substr(0, w.size() - k); };
  if (w.size() > 4 && (ends_with(w, "ies") || ends_with(w, "ied"))) {
    return std::string(drop(3)) + "y";
  }
  if (ends_with(w, "sses") || ends_with(w, "xes") || ends_with(w, "zes") ||
      ends_with(w, "ches") || ends_with(w, "shes")) {
    return std::string(drop(2));
  }
  if (ends_with(w, "ss") || ends_with(w, "us") || ends_with(w, "is")) {
    return std::string(w);
  }
  if (ends_with(w, "s")) return std::string(drop(1));
  if (ends_with(w, "ing") && w.size() - 3 >= 3 && has_vowel(drop(3))) {
    return undouble(drop(3));
  }
  if (ends_with(w, "ed") && w.size() - 2 >= 3 && has_vowel(drop(2))) {
    return undouble(drop(2));
  }
  return std::string(w);
}

Lemmatizer load_lemma_table(std::istream& in) {
  auto table = std::make_shared<std::unordered_map<std::string, std::string>>();
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    table->emplace(to_lower_utf8(line.substr(0, tab)), line.substr(tab + 1));
  }
  return [table](std::string_view token) {
    std::string key = to_lower_utf8(token);
    const auto it = table->find(key);
    return it == table->end() ? key : it->second;
  };
}

}  // namespace embfuse
