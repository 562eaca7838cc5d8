#pragma once

#include <fstream>
#include <set>
#include <string>

#include "lexsum/errors.hpp"

namespace lexsum {

// Embedded copy of data/stopwords_en.txt. The two must stay in lockstep;
// a test compares them byte for byte.
inline const std::set<std::string>& default_stopwords() {
    static const std::set<std::string> words = {
        "a", "about", "above", "across", "after", "again", "against", "all",
        "also", "am", "among", "an", "and", "any", "anything", "are", "as",
        "at", "be", "because", "been", "before", "being", "below", "between",
        "both", "but", "by", "can", "cannot", "could", "did", "do", "does",
        "doing", "down", "during", "each", "everything", "few", "for", "from",
        "further", "had", "has", "have", "having", "he", "her", "here",
        "hers", "herself", "him", "himself", "his", "how", "however", "i",
        "if", "in", "into", "is", "it", "its", "itself", "just", "may", "me",
        "might", "more", "most", "must", "my", "myself", "no", "nor", "not",
        "nothing", "now", "of", "off", "on", "once", "only", "or", "other",
        "ought", "our", "ours", "ourselves", "out", "over", "own", "per",
        "said", "same", "shall", "she", "should", "so", "some", "something",
        "such", "than", "that", "the", "their", "theirs", "them",
        "themselves", "then", "there", "therefore", "these", "they", "this",
        "those", "through", "thus", "to", "too", "under", "until", "up",
        "upon", "very", "via", "was", "we", "were", "what", "when", "where",
        "whether", "which", "while", "who", "whom", "why", "will", "with",
        "within", "without", "would", "yet", "you", "your", "yours",
        "yourself", "yourselves",
    };
    return words;
}

// One word per line, UTF-8, blank lines skipped.
inline std::set<std::string> load_stopwords(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open stopword file: " + path);
    std::set<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) words.insert(line);
    }
    return words;
}

}  // namespace lexsum
