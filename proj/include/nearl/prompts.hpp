#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nearl {

// Fixed whitespace vocabulary. Ids 0 and 1 are the pad and end-of-sequence
// markers; every other entry is a lower-case word.
class Vocabulary {
public:
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kEos = 1;

    static const Vocabulary& toy();

    explicit Vocabulary(std::vector<std::string> words);

    std::size_t size() const noexcept { return words_.size(); }
    // Throws Error(vocabulary) naming the word when it is missing.
    std::size_t id(std::string_view word) const;
    const std::string& word(std::size_t id) const;

private:
    std::vector<std::string> words_;
};

// "A [modality] of [CLASS]", one prompt per class.
struct PromptSpec {
    std::string modality;
    std::vector<std::string> class_names;
};

struct PromptBatch {
    // C sequences of exactly n_tokens ids each.
    std::vector<std::vector<std::size_t>> ids;
    // Index of the EOS token inside each sequence.
    std::vector<std::size_t> eos_positions;

    std::size_t n_classes() const noexcept { return ids.size(); }
    std::vector<std::size_t> flat_ids() const;
};

PromptBatch build_prompts(const PromptSpec& spec, const Vocabulary& vocab, std::size_t n_tokens);

// Words up to (excluding) EOS, joined by single spaces.
std::string detokenize(std::span<const std::size_t> ids, const Vocabulary& vocab);

}  // namespace nearl
