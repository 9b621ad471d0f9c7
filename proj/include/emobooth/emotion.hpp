#pragma once

#include <string>
#include <vector>

namespace emobooth {

// A named emotion, the subject it attaches to, and the trigger lexicon.
struct EmotionSpec {
    std::string name;               // e.g. "sadness"
    std::string subject;            // e.g. "dog"
    std::vector<std::string> lexicon;  // lowercase trigger words/phrases, distinct

    // Throws ValidationError on empty subject/lexicon or case-folded duplicates.
    void validate() const;

    // Any lexicon entry present as a whole word (case-insensitive)?
    bool is_trigger(const std::string& text) const;
    bool mentions_subject(const std::string& text) const;
};

struct SentenceCorpus {
    std::vector<std::string> sentences;
    EmotionSpec spec;
};

struct IngestReport {
    struct Rejection {
        int line = 0;
        std::string sentence;
        std::string reason;
    };
    std::vector<Rejection> rejected;
    int duplicates_removed = 0;
};

// Instruction text for offline sentence generation, parameterized on the
// emotion, subject, requested count, and seed example sentences.
std::string build_generation_prompt(const EmotionSpec& spec, int count,
                                    const std::vector<std::string>& seed_sentences);

// Reads one sentence per line (UTF-8), validates each against the spec
// (subject present, >=1 lexicon word), drops duplicates keeping first
// occurrence. Throws if the file is unreadable or nothing survives.
SentenceCorpus ingest_corpus(const std::string& path, const EmotionSpec& spec,
                             IngestReport* report = nullptr);

void write_corpus(const std::string& path, const SentenceCorpus& corpus);

}  // namespace emobooth
