#include "emobooth/emotion.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "emobooth/common.hpp"
#include "emobooth/text_util.hpp"

namespace emobooth {

void EmotionSpec::validate() const {
    if (name.empty()) throw ValidationError("emotion spec: name is empty");
    if (subject.empty()) throw ValidationError("emotion spec: subject is empty");
    if (lexicon.empty()) throw ValidationError("emotion spec '" + name + "': lexicon is empty");
    std::set<std::string> seen;
    for (const auto& w : lexicon) {
        if (w.empty()) throw ValidationError("emotion spec '" + name + "': empty lexicon entry");
        auto folded = to_lower(w);
        if (!seen.insert(folded).second) {
            throw ValidationError("emotion spec '" + name + "': duplicate lexicon entry '" + folded + "'");
        }
    }
}

bool EmotionSpec::is_trigger(const std::string& text) const {
    for (const auto& w : lexicon) {
        if (contains_whole_word(text, w)) return true;
    }
    return false;
}

bool EmotionSpec::mentions_subject(const std::string& text) const {
    return contains_whole_word(text, subject);
}

std::string build_generation_prompt(const EmotionSpec& spec, int count,
                                    const std::vector<std::string>& seed_sentences) {
    spec.validate();
    if (count < 1) throw ValidationError("generation prompt: count must be >= 1");

    std::ostringstream out;
    if (!seed_sentences.empty()) {
        out << "I currently have " << (seed_sentences.size() == 1 ? "a sentence that depicts" : "sentences that depict")
            << " a text about the feeling of " << spec.name << " towards a " << spec.subject
            << ", for example: ";
        for (std::size_t i = 0; i < seed_sentences.size(); ++i) {
            if (i) out << ", ";
            out << "`" << seed_sentences[i] << "'";
        }
        out << ". ";
    }
    out << "Please generate " << count << " similar sentences, ensuring that each sentence must contain "
        << "emotion words expressing " << spec.name << ", as well as the core word `" << spec.subject
        << "'.";
    return out.str();
}

SentenceCorpus ingest_corpus(const std::string& path, const EmotionSpec& spec, IngestReport* report) {
    spec.validate();
    std::ifstream in(path);
    if (!in) throw ValidationError("corpus file unreadable: " + path);

    SentenceCorpus corpus;
    corpus.spec = spec;
    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        // skip blank lines silently
        if (tokenize_words(line).empty()) continue;

        std::string reason;
        if (!spec.mentions_subject(line)) {
            reason = "missing subject '" + spec.subject + "'";
        } else if (!spec.is_trigger(line)) {
            reason = "no lexicon word for emotion '" + spec.name + "'";
        }
        if (!reason.empty()) {
            if (report) report->rejected.push_back({line_no, line, reason});
            continue;
        }
        if (!seen.insert(line).second) {
            if (report) ++report->duplicates_removed;
            continue;
        }
        corpus.sentences.push_back(line);
    }
    if (corpus.sentences.empty()) {
        throw ValidationError("corpus empty after filtering: " + path);
    }
    return corpus;
}

void write_corpus(const std::string& path, const SentenceCorpus& corpus) {
    std::ofstream out(path);
    if (!out) throw PipelineError("cannot write corpus: " + path);
    for (const auto& s : corpus.sentences) out << s << "\n";
}

}  // namespace emobooth
