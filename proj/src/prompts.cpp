#include "nearl/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "nearl/error.hpp"

namespace nearl {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::vector<std::string> split_words(std::string_view text) {
    std::istringstream is{std::string(text)};
    std::vector<std::string> words;
    for (std::string w; is >> w;) words.push_back(lower(w));
    return words;
}

}  // namespace

const Vocabulary& Vocabulary::toy() {
    static const Vocabulary vocab({
        "<pad>", "<eos>", "a", "an", "of", "the", "image", "scan", "photo",
        "xray", "x-ray", "mri", "ct", "oct", "fundus", "chest", "brain", "retina",
        "normal", "pneumonia", "healthy", "disease", "lesion",
        "non-demented", "very", "mild", "moderate", "dementia",
        "cnv", "dme", "drusen", "edema", "macular", "diabetic",
        "benign", "malignant", "tumor", "covid", "tuberculosis",
        "class0", "class1", "class2", "class3", "class4",
        "class5", "class6", "class7", "class8", "class9",
    });
    return vocab;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    if (words_.size() < 2) fail(ErrorKind::vocabulary, "vocabulary needs pad and eos entries");
}

std::size_t Vocabulary::id(std::string_view word) const {
    const auto it = std::find(words_.begin() + 2, words_.end(), word);
    if (it == words_.end()) {
        fail(ErrorKind::vocabulary, "word '" + std::string(word) + "' is not in the vocabulary");
    }
    return static_cast<std::size_t>(it - words_.begin());
}

const std::string& Vocabulary::word(std::size_t id) const {
    if (id >= words_.size()) {
        fail(ErrorKind::vocabulary, "token id " + std::to_string(id) + " outside vocabulary of " +
                                        std::to_string(words_.size()));
    }
    return words_[id];
}

std::vector<std::size_t> PromptBatch::flat_ids() const {
    std::vector<std::size_t> out;
    for (const auto& seq : ids) out.insert(out.end(), seq.begin(), seq.end());
    return out;
}

PromptBatch build_prompts(const PromptSpec& spec, const Vocabulary& vocab, std::size_t n_tokens) {
    if (spec.class_names.empty()) fail(ErrorKind::config, "prompt spec has no classes");
    PromptBatch batch;
    for (const auto& name : spec.class_names) {
        std::vector<std::string> words = {"a"};
        for (auto& w : split_words(spec.modality)) words.push_back(std::move(w));
        words.push_back("of");
        for (auto& w : split_words(name)) words.push_back(std::move(w));

        std::vector<std::size_t> seq;
        for (const auto& w : words) seq.push_back(vocab.id(w));
        if (seq.size() + 1 > n_tokens) {
            fail(ErrorKind::config, "prompt for class '" + name + "' needs " +
                                        std::to_string(seq.size() + 1) + " tokens, n_text_tokens is " +
                                        std::to_string(n_tokens));
        }
        batch.eos_positions.push_back(seq.size());
        seq.push_back(Vocabulary::kEos);
        seq.resize(n_tokens, Vocabulary::kPad);
        batch.ids.push_back(std::move(seq));
    }
    return batch;
}

std::string detokenize(std::span<const std::size_t> ids, const Vocabulary& vocab) {
    std::string out;
    for (std::size_t id : ids) {
        if (id == Vocabulary::kEos) break;
        if (id == Vocabulary::kPad) continue;
        if (!out.empty()) out += ' ';
        out += vocab.word(id);
    }
    return out;
}

}  // namespace nearl
