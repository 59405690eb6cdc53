#include "pvp/text.hpp"

#include <array>
#include <unordered_map>

namespace pvp::text {
namespace {

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }
bool is_consonant(char c) { return c >= 'a' && c <= 'z' && !is_vowel(c); }

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool has_vowel(std::string_view s) {
    for (char c : s)
        if (is_vowel(c) || c == 'y') return true;
    return false;
}

const std::unordered_map<std::string_view, std::string_view>& irregulars() {
    static const std::unordered_map<std::string_view, std::string_view> table{
        {"people", "person"}, {"men", "man"},       {"women", "woman"},     {"children", "child"},
        {"mice", "mouse"},    {"geese", "goose"},   {"feet", "foot"},       {"teeth", "tooth"},
        {"knives", "knife"},  {"wives", "wife"},    {"leaves", "leaf"},     {"buses", "bus"},
        {"oxen", "ox"},       {"sheep", "sheep"},   {"fish", "fish"},       {"deer", "deer"},
        {"wolves", "wolf"},   {"shelves", "shelf"}, {"loaves", "loaf"},     {"halves", "half"},
        {"ran", "run"},       {"sat", "sit"},       {"rode", "ride"},       {"flew", "fly"},
        {"ate", "eat"},       {"skis", "ski"},      {"lying", "lie"},     {"dying", "die"},       {"tying", "tie"},
    };
    return table;
}

// Strips a verb suffix from `stem` (already without -ing/-ed).
std::string restore_stem(std::string stem) {
    const auto n = stem.size();
    if (n >= 2 && stem[n - 1] == stem[n - 2] && is_consonant(stem[n - 1])) {
        const char c = stem[n - 1];
        if (c != 'l' && c != 's' && c != 'z' && c != 'f') stem.pop_back();
        return stem;
    }
    if (n == 3 && is_consonant(stem[0]) && is_vowel(stem[1]) && is_consonant(stem[2]) && stem[2] != 'w' &&
        stem[2] != 'x' && stem[2] != 'y') {
        stem.push_back('e');
    }
    return stem;
}

}  // namespace

std::vector<std::string> split_words(std::string_view sentence) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : sentence) {
        const auto c = static_cast<unsigned char>(ch);
        if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
            cur.push_back(static_cast<char>(c));
        } else if (c >= 'A' && c <= 'Z') {
            cur.push_back(static_cast<char>(c - 'A' + 'a'));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

std::string lemmatize(std::string_view word) {
    std::string w(word);
    if (auto it = irregulars().find(w); it != irregulars().end()) return std::string(it->second);
    if (w.size() <= 3) return w;

    if (ends_with(w, "ies") && w.size() > 4) return w.substr(0, w.size() - 3) + "y";
    for (std::string_view suffix : {"sses", "ches", "shes", "xes", "zes"}) {
        if (ends_with(w, suffix)) return w.substr(0, w.size() - 2);
    }
    if (ends_with(w, "ss") || ends_with(w, "us") || ends_with(w, "is")) return w;
    if (w.back() == 's') return w.substr(0, w.size() - 1);

    if (ends_with(w, "ing") && w.size() >= 6) {
        const auto stem = w.substr(0, w.size() - 3);
        if (has_vowel(stem)) return restore_stem(stem);
    }
    if (ends_with(w, "ied") && w.size() >= 5) return w.substr(0, w.size() - 3) + "y";
    if (ends_with(w, "ed") && w.size() >= 5) {
        const auto stem = w.substr(0, w.size() - 2);
        if (has_vowel(stem)) return restore_stem(stem);
    }
    return w;
}

std::vector<std::string> lemmas(std::string_view sentence) {
    auto words = split_words(sentence);
    for (auto& w : words) w = lemmatize(w);
    return words;
}

}  // namespace pvp::text
