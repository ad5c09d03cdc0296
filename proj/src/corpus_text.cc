/* Copyright 2026 The MergeForge Authors. All Rights Reserved.

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

// Format detection, HTML extraction and text cleaning.

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <unordered_map>
#include <unordered_set>

#include "mergeforge/corpus.h"
#include "mergeforge/error.h"

namespace mf {

namespace {

// Length of the well-formed UTF-8 sequence at `s[i]`, or 0.
size_t Utf8SequenceLength(std::string_view s, size_t i, char32_t* cp = nullptr) {
  const auto b = [&](size_t k) { return static_cast<unsigned char>(s[k]); };
  const unsigned char lead = b(i);
  if (lead < 0x80) {
    if (cp) *cp = lead;
    return 1;
  }
  size_t len;
  char32_t value;
  char32_t min;
  if ((lead & 0xE0) == 0xC0) {
    len = 2, value = lead & 0x1F, min = 0x80;
  } else if ((lead & 0xF0) == 0xE0) {
    len = 3, value = lead & 0x0F, min = 0x800;
  } else if ((lead & 0xF8) == 0xF0) {
    len = 4, value = lead & 0x07, min = 0x10000;
  } else {
    return 0;
  }
  if (i + len > s.size()) return 0;
  for (size_t k = 1; k < len; ++k) {
    if ((b(i + k) & 0xC0) != 0x80) return 0;
    value = (value << 6) | (b(i + k) & 0x3F);
  }
  if (value < min || value > 0x10FFFF || (value >= 0xD800 && value <= 0xDFFF)) {
    return 0;
  }
  if (cp) *cp = value;
  return len;
}

void AppendUtf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

std::string Lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool EndsWithCi(std::string_view name, std::string_view suffix) {
  return name.size() >= suffix.size() &&
         Lower(name.substr(name.size() - suffix.size())) == suffix;
}

bool IsHtmlSpace(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f';
}

const std::unordered_set<std::string>& KnownHtmlTags() {
  static const std::unordered_set<std::string> tags = {
      "html", "head",  "body",  "title", "meta",  "link",    "script", "style",
      "div",  "span",  "p",     "a",     "br",    "hr",      "h1",     "h2",
      "h3",   "h4",    "h5",    "h6",    "table", "tr",      "td",     "th",
      "tbody", "thead", "ul",   "ol",    "li",    "b",       "i",      "u",
      "em",   "strong", "font", "center", "img",  "nav",     "section", "article",
      "header", "footer", "main", "pre",  "blockquote", "form", "sec-document",
      "document", "type", "text"};
  return tags;
}

// Reads a tag name starting at `i`; returns it lowercased.
std::string ReadTagName(std::string_view s, size_t i) {
  size_t j = i;
  while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) ||
                          s[j] == '-' || s[j] == ':')) {
    ++j;
  }
  return Lower(s.substr(i, j - i));
}

bool HasKnownTag(std::string_view window) {
  for (size_t i = 0; i + 1 < window.size(); ++i) {
    if (window[i] != '<') continue;
    size_t j = i + 1;
    if (window[j] == '/') ++j;
    if (window[j] == '!') {
      if (Lower(window.substr(j, 9)) == "!doctype ") return true;
      continue;
    }
    if (j >= window.size()) break;
    const std::string name = ReadTagName(window, j);
    const size_t after = j + name.size();
    if (name.empty() || after >= window.size()) continue;
    const char c = window[after];
    if ((IsHtmlSpace(c) || c == '>' || c == '/') && KnownHtmlTags().count(name)) {
      return true;
    }
  }
  return false;
}

const std::unordered_map<std::string_view, char32_t>& NamedEntities() {
  static const std::unordered_map<std::string_view, char32_t> table = {
      {"amp", '&'},       {"lt", '<'},         {"gt", '>'},
      {"quot", '"'},      {"apos", '\''},      {"nbsp", 0xA0},
      {"ndash", 0x2013},  {"mdash", 0x2014},   {"lsquo", 0x2018},
      {"rsquo", 0x2019},  {"ldquo", 0x201C},   {"rdquo", 0x201D},
      {"sbquo", 0x201A},  {"bdquo", 0x201E},   {"hellip", 0x2026},
      {"bull", 0x2022},   {"middot", 0xB7},    {"copy", 0xA9},
      {"reg", 0xAE},      {"trade", 0x2122},   {"sect", 0xA7},
      {"para", 0xB6},     {"cent", 0xA2},      {"pound", 0xA3},
      {"euro", 0x20AC},   {"yen", 0xA5},       {"deg", 0xB0},
      {"plusmn", 0xB1},   {"times", 0xD7},     {"divide", 0xF7},
      {"frac12", 0xBD},   {"frac14", 0xBC},    {"frac34", 0xBE},
      {"laquo", 0xAB},    {"raquo", 0xBB},     {"dagger", 0x2020},
      {"Dagger", 0x2021}, {"permil", 0x2030},  {"shy", 0xAD},
      {"ensp", 0x2002},   {"emsp", 0x2003},    {"thinsp", 0x2009},
      {"zwnj", 0x200C},   {"zwj", 0x200D},     {"eacute", 0xE9},
      {"Eacute", 0xC9},   {"egrave", 0xE8},    {"uuml", 0xFC},
      {"ouml", 0xF6},     {"auml", 0xE4},      {"ccedil", 0xE7},
      {"ntilde", 0xF1},   {"szlig", 0xDF},     {"micro", 0xB5},
      {"iexcl", 0xA1},    {"iquest", 0xBF},    {"larr", 0x2190},
      {"rarr", 0x2192},   {"uarr", 0x2191},    {"darr", 0x2193},
      {"check", 0x2713},  {"squ", 0x25A1},     {"minus", 0x2212}};
  return table;
}

// Numeric references in 0x80-0x9F follow the windows-1252 reading browsers
// apply; filings use &#150; and &#151; for dashes.
char32_t RemapNumericReference(char32_t cp) {
  static constexpr std::array<char32_t, 32> kC1 = {
      0x20AC, 0xFFFD, 0x201A, 0x0192, 0x201E, 0x2026, 0x2020, 0x2021,
      0x02C6, 0x2030, 0x0160, 0x2039, 0x0152, 0xFFFD, 0x017D, 0xFFFD,
      0xFFFD, 0x2018, 0x2019, 0x201C, 0x201D, 0x2022, 0x2013, 0x2014,
      0x02DC, 0x2122, 0x0161, 0x203A, 0x0153, 0xFFFD, 0x017E, 0x0178};
  if (cp >= 0x80 && cp <= 0x9F) return kC1[cp - 0x80];
  if (cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return 0xFFFD;
  return cp;
}

// Decodes the character reference at s[i] == '&'. Returns consumed length or
// 0 if it is not a reference.
size_t DecodeEntity(std::string_view s, size_t i, std::string& out) {
  const size_t semi = s.find(';', i + 1);
  if (semi == std::string_view::npos || semi - i > 32) return 0;
  const std::string_view body = s.substr(i + 1, semi - i - 1);
  if (body.empty()) return 0;
  if (body[0] == '#') {
    const bool hex = body.size() > 1 && (body[1] == 'x' || body[1] == 'X');
    const std::string_view digits = body.substr(hex ? 2 : 1);
    if (digits.empty()) return 0;
    uint32_t value = 0;
    const auto [ptr, ec] =
        std::from_chars(digits.data(), digits.data() + digits.size(), value, hex ? 16 : 10);
    if (ptr != digits.data() + digits.size()) return 0;
    AppendUtf8(out, ec == std::errc() ? RemapNumericReference(value) : 0xFFFD);
    return semi - i + 1;
  }
  const auto it = NamedEntities().find(body);
  if (it == NamedEntities().end()) return 0;
  AppendUtf8(out, it->second);
  return semi - i + 1;
}

std::string DecodeEntities(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (size_t i = 0; i < s.size();) {
    if (s[i] == '&') {
      const size_t used = DecodeEntity(s, i, out);
      if (used > 0) {
        i += used;
        continue;
      }
    }
    out += s[i++];
  }
  return out;
}

enum class BlockKind { kParagraph, kHeading, kItem };

class BlockBuilder {
 public:
  void Begin(BlockKind kind, int level = 0) {
    Flush();
    kind_ = kind;
    level_ = level;
  }

  void End() { Flush(); }

  // Appends decoded text; `in_link` marks anchor text.
  void AddText(std::string_view text, bool in_link) {
    for (size_t i = 0; i < text.size();) {
      const unsigned char c = static_cast<unsigned char>(text[i]);
      if (IsHtmlSpace(static_cast<char>(c))) {
        pending_space_ = true;
        ++i;
        continue;
      }
      // U+00A0 renders as a space.
      if (c == 0xC2 && i + 1 < text.size() &&
          static_cast<unsigned char>(text[i + 1]) == 0xA0) {
        pending_space_ = true;
        i += 2;
        continue;
      }
      if (!text_.empty() && text_.back() != '\n') {
        if (pending_separator_) {
          text_ += " | ";
        } else if (pending_space_) {
          text_ += ' ';
        }
      }
      pending_space_ = pending_separator_ = false;
      size_t len = 1;
      while (i + len < text.size() &&
             (static_cast<unsigned char>(text[i + len]) & 0xC0) == 0x80) {
        ++len;
      }
      text_.append(text.substr(i, len));
      ++chars_;
      if (in_link) ++link_chars_;
      i += len;
    }
  }

  void LineBreak() {
    if (!text_.empty() && text_.back() != '\n') text_ += '\n';
    pending_space_ = pending_separator_ = false;
  }

  void CellBoundary() {
    if (!text_.empty()) pending_separator_ = true;
  }

  std::vector<std::string> TakeBlocks() {
    Flush();
    return std::move(blocks_);
  }

 private:
  void Flush() {
    while (!text_.empty() && text_.back() == '\n') text_.pop_back();
    if (!text_.empty() && link_chars_ * 2 <= chars_) {
      switch (kind_) {
        case BlockKind::kHeading:
          std::replace(text_.begin(), text_.end(), '\n', ' ');
          blocks_.push_back(std::string(level_, '#') + " " + text_);
          break;
        case BlockKind::kItem:
          blocks_.push_back("- " + text_);
          break;
        case BlockKind::kParagraph:
          blocks_.push_back(text_);
          break;
      }
    }
    text_.clear();
    chars_ = link_chars_ = 0;
    pending_space_ = pending_separator_ = false;
    kind_ = BlockKind::kParagraph;
    level_ = 0;
  }

  BlockKind kind_ = BlockKind::kParagraph;
  int level_ = 0;
  std::string text_;
  size_t chars_ = 0;
  size_t link_chars_ = 0;
  bool pending_space_ = false;
  bool pending_separator_ = false;
  std::vector<std::string> blocks_;
};

const std::unordered_set<std::string>& BlockTags() {
  static const std::unordered_set<std::string> tags = {
      "p",       "div",    "tr",      "table",  "tbody",   "thead",   "tfoot",
      "section", "article", "header", "footer", "main",    "aside",   "blockquote",
      "pre",     "ul",     "ol",      "dl",     "dt",      "dd",      "form",
      "fieldset", "figure", "figcaption", "address", "center", "caption", "hr",
      "body",    "html",   "page",    "document"};
  return tags;
}

const std::unordered_set<std::string>& SkippedTags() {
  static const std::unordered_set<std::string> tags = {
      "head", "nav", "noscript", "template", "title", "iframe", "svg",
      "select", "object", "button"};
  return tags;
}

bool IsRawTextTag(const std::string& name) { return name == "script" || name == "style"; }

int HeadingLevel(const std::string& name) {
  if (name.size() == 2 && name[0] == 'h' && name[1] >= '1' && name[1] <= '6') {
    return name[1] - '0';
  }
  return 0;
}

// Position just past the '>' closing a tag that starts at `i`, honoring
// quoted attribute values.
size_t SkipTag(std::string_view s, size_t i, bool* self_closing) {
  char quote = 0;
  for (size_t j = i; j < s.size(); ++j) {
    const char c = s[j];
    if (quote) {
      if (c == quote) quote = 0;
    } else if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '>') {
      if (self_closing) *self_closing = j > i && s[j - 1] == '/';
      return j + 1;
    }
  }
  return s.size();
}

size_t FindCi(std::string_view haystack, std::string_view needle, size_t from) {
  const auto it = std::search(
      haystack.begin() + std::min(from, haystack.size()), haystack.end(), needle.begin(),
      needle.end(), [](char a, char b) {
        return std::tolower(static_cast<unsigned char>(a)) ==
               std::tolower(static_cast<unsigned char>(b));
      });
  return it == haystack.end() ? std::string_view::npos
                              : static_cast<size_t>(it - haystack.begin());
}

}  // namespace

bool IsValidUtf8(std::string_view bytes) {
  for (size_t i = 0; i < bytes.size();) {
    const size_t len = Utf8SequenceLength(bytes, i);
    if (len == 0) return false;
    i += len;
  }
  return true;
}

std::string ToValidUtf8(std::string_view bytes) {
  std::string out;
  out.reserve(bytes.size());
  for (size_t i = 0; i < bytes.size();) {
    const size_t len = Utf8SequenceLength(bytes, i);
    if (len == 0) {
      AppendUtf8(out, 0xFFFD);
      ++i;
    } else {
      out.append(bytes.substr(i, len));
      i += len;
    }
  }
  return out;
}

std::string_view DocumentFormatName(DocumentFormat format) {
  switch (format) {
    case DocumentFormat::kHtml: return "html";
    case DocumentFormat::kMarkdown: return "markdown";
    case DocumentFormat::kPlaintext: return "plaintext";
    case DocumentFormat::kPdf: return "pdf";
    case DocumentFormat::kExcel: return "excel";
    case DocumentFormat::kZip: return "zip";
    case DocumentFormat::kUnknown: return "unknown";
  }
  return "unknown";
}

std::optional<DocumentFormat> ParseDocumentFormat(std::string_view name) {
  for (DocumentFormat f :
       {DocumentFormat::kHtml, DocumentFormat::kMarkdown, DocumentFormat::kPlaintext,
        DocumentFormat::kPdf, DocumentFormat::kExcel, DocumentFormat::kZip,
        DocumentFormat::kUnknown}) {
    if (Lower(name) == DocumentFormatName(f)) return f;
  }
  return std::nullopt;
}

std::string_view DropReasonName(DropReason reason) {
  switch (reason) {
    case DropReason::kPdf: return "Pdf";
    case DropReason::kExcel: return "Excel";
    case DropReason::kZip: return "Zip";
    case DropReason::kUnknownFormat: return "UnknownFormat";
    case DropReason::kNotAccepted: return "NotAccepted";
    case DropReason::kExtractFailed: return "ExtractFailed";
    case DropReason::kTooShort: return "TooShort";
  }
  return "Unknown";
}

DocumentFormat DetectFormat(std::string_view raw, std::string_view name) {
  if (raw.substr(0, 4) == "%PDF") return DocumentFormat::kPdf;
  if (raw.substr(0, 4) == std::string_view("PK\x03\x04", 4)) {
    return EndsWithCi(name, ".xlsx") || EndsWithCi(name, ".xls") ? DocumentFormat::kExcel
                                                                 : DocumentFormat::kZip;
  }
  // Legacy compound-file spreadsheets.
  if (raw.substr(0, 4) == "\xD0\xCF\x11\xE0" && EndsWithCi(name, ".xls")) {
    return DocumentFormat::kExcel;
  }
  size_t i = 0;
  if (raw.substr(0, 3) == "\xEF\xBB\xBF") i = 3;
  while (i < raw.size() && IsHtmlSpace(raw[i])) ++i;
  if (i < raw.size() && raw[i] == '<' && HasKnownTag(raw.substr(i, 1024))) {
    return DocumentFormat::kHtml;
  }
  if (EndsWithCi(name, ".md") || EndsWithCi(name, ".markdown")) {
    return DocumentFormat::kMarkdown;
  }
  if (raw.find('\0') == std::string_view::npos && IsValidUtf8(raw)) {
    return DocumentFormat::kPlaintext;
  }
  return DocumentFormat::kUnknown;
}

std::string ExtractText(std::string_view input) {
  const std::string html = ToValidUtf8(input);
  const std::string_view s = html;
  BlockBuilder blocks;
  std::vector<std::string> skip_stack;
  int link_depth = 0;
  bool saw_markup = false;

  size_t text_start = 0;
  const auto emit_text = [&](size_t end) {
    if (end > text_start && skip_stack.empty()) {
      blocks.AddText(DecodeEntities(s.substr(text_start, end - text_start)),
                     link_depth > 0);
    }
  };

  size_t i = 0;
  while (i < s.size()) {
    if (s[i] != '<' || i + 1 >= s.size()) {
      ++i;
      continue;
    }
    const char next = s[i + 1];
    if (s.substr(i, 4) == "<!--") {
      emit_text(i);
      const size_t end = s.find("-->", i + 4);
      i = end == std::string_view::npos ? s.size() : end + 3;
      text_start = i;
      saw_markup = true;
      continue;
    }
    if (next == '!' || next == '?') {
      emit_text(i);
      i = SkipTag(s, i, nullptr);
      text_start = i;
      saw_markup = true;
      continue;
    }
    const bool closing = next == '/';
    const size_t name_at = i + (closing ? 2 : 1);
    if (name_at >= s.size() || !std::isalpha(static_cast<unsigned char>(s[name_at]))) {
      ++i;  // a literal '<'
      continue;
    }
    emit_text(i);
    saw_markup = true;
    const std::string name = ReadTagName(s, name_at);
    bool self_closing = false;
    i = SkipTag(s, name_at, &self_closing);
    text_start = i;

    if (closing) {
      const auto it = std::find(skip_stack.rbegin(), skip_stack.rend(), name);
      if (it != skip_stack.rend()) {
        skip_stack.erase(std::next(it).base(), skip_stack.end());
        continue;
      }
      if (!skip_stack.empty()) continue;
      if (name == "a") {
        link_depth = std::max(0, link_depth - 1);
      } else if (HeadingLevel(name) || name == "li" || BlockTags().count(name)) {
        blocks.End();
      }
      continue;
    }

    if (IsRawTextTag(name)) {
      if (self_closing) continue;
      const size_t close = FindCi(s, "</" + name, i);
      i = close == std::string_view::npos ? s.size() : SkipTag(s, close, nullptr);
      text_start = i;
      continue;
    }
    if (name == "body") {
      // <head> is often left open.
      const auto it = std::find(skip_stack.begin(), skip_stack.end(), "head");
      skip_stack.erase(it, skip_stack.end());
    }
    if (SkippedTags().count(name)) {
      if (!self_closing) skip_stack.push_back(name);
      continue;
    }
    if (!skip_stack.empty()) continue;

    if (const int level = HeadingLevel(name)) {
      blocks.Begin(BlockKind::kHeading, level);
    } else if (name == "li") {
      blocks.Begin(BlockKind::kItem);
    } else if (BlockTags().count(name)) {
      blocks.Begin(BlockKind::kParagraph);
    } else if (name == "br") {
      blocks.LineBreak();
    } else if (name == "td" || name == "th") {
      blocks.CellBoundary();
    } else if (name == "a" && !self_closing) {
      ++link_depth;
    }
  }
  emit_text(s.size());
  if (!saw_markup) throw Error(ErrorCode::kNotHtml, "no markup found");

  std::string out;
  for (const std::string& block : blocks.TakeBlocks()) {
    if (!out.empty()) out += "\n\n";
    out += block;
  }
  return out;
}

std::variant<std::string, DropReason> CleanText(std::string_view text,
                                                size_t min_chars) {
  std::string unix_text;
  unix_text.reserve(text.size());
  const std::string valid = ToValidUtf8(text);
  for (size_t i = 0; i < valid.size(); ++i) {
    if (valid[i] == '\r') {
      unix_text += '\n';
      if (i + 1 < valid.size() && valid[i + 1] == '\n') ++i;
    } else {
      unix_text += valid[i];
    }
  }

  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error(ErrorCode::kIoFailure, "ICU NFC unavailable");
  const icu::UnicodeString normalized =
      nfc->normalize(icu::UnicodeString::fromUTF8(unix_text), status);
  if (U_FAILURE(status)) throw Error(ErrorCode::kIoFailure, u_errorName(status));

  // Split into lines, drop trailing whitespace, collapse blank runs.
  icu::UnicodeString cleaned;
  int32_t blank_run = 0;
  bool any_line = false;
  int32_t start = 0;
  const int32_t length = normalized.length();
  while (start <= length) {
    int32_t end = normalized.indexOf(u'\n', start);
    if (end < 0) end = length;
    int32_t last = end;
    while (last > start) {
      const UChar32 cp = normalized.char32At(normalized.moveIndex32(last, -1));
      if (!u_isUWhiteSpace(cp)) break;
      last = normalized.moveIndex32(last, -1);
    }
    if (last == start) {
      ++blank_run;
    } else {
      if (any_line) cleaned.append(blank_run > 0 ? u"\n\n" : u"\n");
      cleaned.append(normalized, start, last - start);
      any_line = true;
      blank_run = 0;
    }
    start = end + 1;
  }

  if (static_cast<size_t>(cleaned.countChar32()) < min_chars || !any_line) {
    return DropReason::kTooShort;
  }
  std::string out;
  cleaned.toUTF8String(out);
  return out;
}

uint64_t EstimateTokens(std::string_view text) {
  uint64_t words = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c));
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return (words * 13 + 9) / 10;
}

}  // namespace mf
