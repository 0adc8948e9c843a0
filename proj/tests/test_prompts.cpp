#include <doctest.h>

#include "nearl/error.hpp"
#include "nearl/prompts.hpp"

using namespace nearl;

TEST_CASE("prompts follow the template and end in EOS followed by padding") {
    const auto& vocab = Vocabulary::toy();
    const PromptBatch p = build_prompts({"xray", {"normal", "pneumonia"}}, vocab, 8);
    REQUIRE(p.n_classes() == 2);
    CHECK(detokenize(p.ids[0], vocab) == "a xray of normal");
    CHECK(detokenize(p.ids[1], vocab) == "a xray of pneumonia");
    CHECK(p.eos_positions[0] == 4);
    CHECK(p.ids[0][4] == Vocabulary::kEos);
    CHECK(p.ids[0][7] == Vocabulary::kPad);
    CHECK(p.flat_ids().size() == 16);
}

TEST_CASE("multi-word and upper-case names are tokenized word by word") {
    const auto& vocab = Vocabulary::toy();
    const PromptBatch p = build_prompts({"XRay", {"class0", "Class1"}}, vocab, 6);
    CHECK(detokenize(p.ids[1], vocab) == "a xray of class1");
}

TEST_CASE("unknown words and overlong prompts are rejected") {
    const auto& vocab = Vocabulary::toy();
    try {
        build_prompts({"xray", {"giraffe"}}, vocab, 8);
        FAIL("expected a vocabulary error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::vocabulary);
        CHECK(std::string(e.what()).find("giraffe") != std::string::npos);
    }
    CHECK_THROWS_AS(build_prompts({"xray", {"normal"}}, vocab, 4), Error);
    CHECK(vocab.word(vocab.id("pneumonia")) == "pneumonia");
}
