#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pvp::text {

/// Lowercases ASCII and splits on every non-alphanumeric byte.
std::vector<std::string> split_words(std::string_view sentence);

/// Rule-based English lemmatizer for nouns and simple verb forms.
///
/// Rules, applied to words longer than three letters:
///   irregular table       people→person, children→child, mice→mouse, ...
///   -ies → -y             puppies→puppy
///   -sses/-ches/-shes/-xes/-zes → drop "es"
///   -ss, -us, -is         unchanged
///   -s                    dropped
///   -ing / -ed            dropped when a three-letter stem with a vowel remains;
///                         a doubled final consonant is undoubled (sitting→sit),
///                         a bare consonant-vowel-consonant stem regains its
///                         silent e (riding→ride); -ied → -y
std::string lemmatize(std::string_view word);

/// split_words followed by lemmatize.
std::vector<std::string> lemmas(std::string_view sentence);

}  // namespace pvp::text
