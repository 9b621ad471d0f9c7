#pragma once

#include <string>
#include <vector>

namespace emobooth {

// Lowercased word tokens (runs of alphanumeric chars; everything else splits).
std::vector<std::string> tokenize_words(const std::string& text);

// Sentence split into word and punctuation units, original case preserved.
// Whitespace is dropped; punctuation marks are single-char units.
struct TextUnit {
    std::string text;
    bool is_word = false;
};
std::vector<TextUnit> split_units(const std::string& text);

// Join units back into a sentence: words separated by spaces, punctuation
// attached to the preceding unit.
std::string join_units(const std::vector<TextUnit>& units);

std::string to_lower(const std::string& s);

// Whole-word, case-insensitive match. `needle` may be a multi-word phrase,
// which must appear as consecutive word tokens.
bool contains_whole_word(const std::string& text, const std::string& needle);

}  // namespace emobooth
