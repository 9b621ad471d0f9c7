#include "emobooth/text_util.hpp"

#include <cctype>

namespace emobooth {

namespace {
bool is_word_char(unsigned char c) { return std::isalnum(c) != 0 || c == '\''; }
}  // namespace

std::string to_lower(const std::string& s) {
    std::string out = s;
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        if (is_word_char(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

std::vector<TextUnit> split_units(const std::string& text) {
    std::vector<TextUnit> units;
    std::string cur;
    auto flush_word = [&] {
        if (!cur.empty()) {
            units.push_back({cur, true});
            cur.clear();
        }
    };
    for (unsigned char c : text) {
        if (is_word_char(c)) {
            cur.push_back(static_cast<char>(c));
        } else {
            flush_word();
            if (!std::isspace(c)) units.push_back({std::string(1, static_cast<char>(c)), false});
        }
    }
    flush_word();
    return units;
}

std::string join_units(const std::vector<TextUnit>& units) {
    std::string out;
    for (const auto& u : units) {
        if (!out.empty() && u.is_word) out.push_back(' ');
        out += u.text;
    }
    return out;
}

bool contains_whole_word(const std::string& text, const std::string& needle) {
    const auto tokens = tokenize_words(text);
    const auto phrase = tokenize_words(needle);
    if (phrase.empty() || tokens.size() < phrase.size()) return false;
    for (std::size_t i = 0; i + phrase.size() <= tokens.size(); ++i) {
        bool match = true;
        for (std::size_t j = 0; j < phrase.size(); ++j) {
            if (tokens[i + j] != phrase[j]) {
                match = false;
                break;
            }
        }
        if (match) return true;
    }
    return false;
}

}  // namespace emobooth
