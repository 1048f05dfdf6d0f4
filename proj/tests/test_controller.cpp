#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"
#include "json.hpp"

#include <gtest/gtest.h>

#include <thread>

#include "laser/controller.hpp"
#include "laser/errors.hpp"
#include "support.hpp"

using namespace laser;

namespace {

// Returns canned responses in order, repeating the last.
class ScriptedBackend : public CompletionBackend {
public:
    explicit ScriptedBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}
    std::string name() const override { return "scripted"; }
    std::string complete(const std::string&, const std::string&) const override {
        const std::size_t i = std::min(calls_++, replies_.size() - 1);
        return replies_[i];
    }
    std::size_t calls() const { return calls_; }

private:
    std::vector<std::string> replies_;
    mutable std::size_t calls_ = 0;
};

std::string fence(const std::string& body) { return "Here you go.\n```json\n" + body + "\n```\n"; }

}  // namespace

TEST(Parse, PromptList) {
    const auto r = parse_agent_response(fence(R"(["a","b"])"), ResponseSchema::prompt_list);
    EXPECT_EQ(std::get<std::vector<std::string>>(r), (std::vector<std::string>{"a", "b"}));
}

TEST(Parse, StrategyLabelIsCaseInsensitive) {
    const auto r = parse_agent_response(fence(R"({"strategy": "kvai", "rationale": "pose"})"),
                                        ResponseSchema::strategy_label);
    EXPECT_EQ(std::get<StrategyLabel>(r).strategy, InjectionStrategy::kvai);
    const auto s = parse_agent_response(fence(R"("Fai")"), ResponseSchema::strategy_label);
    EXPECT_EQ(std::get<StrategyLabel>(s).strategy, InjectionStrategy::fai);
}

TEST(Parse, SinglePromptAcceptsBareFence) {
    const auto r = parse_agent_response("```\n\"a meadow\"\n```", ResponseSchema::single_prompt);
    EXPECT_EQ(std::get<std::string>(r), "a meadow");
}

TEST(Parse, StrictnessErrors) {
    EXPECT_THROW(parse_agent_response(fence(R"(["a"])") + fence(R"(["b"])"), ResponseSchema::prompt_list), ParseError);
    EXPECT_THROW(parse_agent_response(R"(["a","b"])", ResponseSchema::prompt_list), ParseError);
    EXPECT_THROW(parse_agent_response("```json\n[\"a\"]\n", ResponseSchema::prompt_list), ParseError);
    EXPECT_THROW(parse_agent_response(fence(R"({"a": 1})"), ResponseSchema::prompt_list), ParseError);
    EXPECT_THROW(parse_agent_response(fence(R"({"strategy": "None"})"), ResponseSchema::strategy_label), ParseError);
    EXPECT_THROW(parse_agent_response(fence(R"({"strategy": "XYZ"})"), ResponseSchema::strategy_label), ParseError);
    EXPECT_THROW(parse_agent_response("```python\n[\"a\"]\n```", ResponseSchema::prompt_list), ParseError);
}

TEST(Parse, ErrorOffsetPointsIntoTheBody) {
    const std::string raw = "```json\n[\"a\", ]\n```";
    try {
        parse_agent_response(raw, ResponseSchema::prompt_list);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_GE(e.offset(), 8u);
        EXPECT_LT(e.offset(), raw.size());
    }
}

TEST(Mock, MeadowDecomposition) {
    MockBackend mock;
    Controller c(mock);
    const auto prompts = c.sia_decompose("A year has passed on the spring meadow", 3);
    EXPECT_EQ(prompts, (std::vector<std::string>{"The meadow in spring", "The meadow in summer", "The meadow in autumn",
                                                 "The meadow in winter"}));
}

TEST(Mock, SingleStageGivesTwoPrompts) {
    MockBackend mock;
    Controller c(mock);
    EXPECT_EQ(c.sia_decompose("A year has passed on the spring meadow", 1).size(), 2u);
    EXPECT_EQ(c.sia_decompose("a paper boat turns into a steel ship", 1),
              (std::vector<std::string>{"A paper boat", "A steel ship"}));
    EXPECT_EQ(c.sia_decompose("something unlisted", 1).size(), 2u);
}

TEST(Mock, AutoStageCountStaysInRange) {
    MockBackend mock;
    Controller c(mock);
    const auto p = c.sia_decompose("A year has passed on the spring meadow", 0);
    EXPECT_GE(p.size(), 2u);
    EXPECT_LE(p.size(), static_cast<std::size_t>(kMaxStages + 1));
}

TEST(Mock, CanonicalIcaPairs) {
    MockBackend mock;
    Controller c(mock);
    EXPECT_EQ(c.ica_classify("a wooden sculpture of a cat", "a golden sculpture of a cat").strategy,
              InjectionStrategy::fai);
    EXPECT_EQ(c.ica_classify("a cat sitting", "a cat jumping").strategy, InjectionStrategy::kvai);
    EXPECT_EQ(c.ica_classify("a cat sitting", "a golden dog jumping").strategy, InjectionStrategy::dai);
}

TEST(Mock, PgaAppendsSuffixAndKeepsWords) {
    MockBackend mock;
    Controller c(mock);
    const std::string out = c.pga_enhance("The meadow in spring");
    EXPECT_EQ(out, "The meadow in spring" + std::string(MockBackend::kQualitySuffix));
    EXPECT_EQ(c.pga_enhance("The meadow in spring"), out);
    EXPECT_THROW(c.pga_enhance("   "), ConfigError);
}

TEST(Workflow, PlanShapeAndTranscripts) {
    MockBackend mock;
    Controller c(mock);
    AnimationRequest req{"A year has passed on the spring meadow", std::nullopt, 3, 4, 0};
    const StagePlan plan = c.plan(req);
    EXPECT_EQ(plan.prompts.size(), 4u);
    EXPECT_EQ(plan.n_t(), 3);
    ASSERT_TRUE(plan.enhanced_initial_prompt.has_value());
    for (const auto& t : plan.transitions) {
        EXPECT_EQ(t.strategy, InjectionStrategy::fai);
        EXPECT_EQ(t.source, StrategySource::ica);
    }
    int sia = 0, pga = 0, ica = 0;
    for (const auto& t : c.transcripts()) {
        sia += t.agent == "sia";
        pga += t.agent == "pga";
        ica += t.agent == "ica";
        EXPECT_TRUE(t.error.empty());
        EXPECT_EQ(t.prompt_version, "v1");
    }
    EXPECT_EQ(sia, 1);
    EXPECT_EQ(pga, 1);
    EXPECT_EQ(ica, 3);
}

TEST(Workflow, ImageSkipsPga) {
    MockBackend mock;
    Controller c(mock);
    AnimationRequest req{"a cat sitting turns into a cat jumping", Image(32, 32), 1, 4, 0};
    const StagePlan plan = c.plan(req);
    EXPECT_FALSE(plan.enhanced_initial_prompt.has_value());
    for (const auto& t : c.transcripts()) EXPECT_NE(t.agent, "pga");
    EXPECT_EQ(c.transcripts().size(), 2u);
    EXPECT_EQ(plan.transitions.front().strategy, InjectionStrategy::kvai);
}

TEST(Workflow, OverrideBypassesIca) {
    MockBackend mock;
    Controller c(mock);
    AnimationRequest req{"A year has passed on the spring meadow", Image(32, 32), 2, 4, 0};
    const StagePlan plan = c.plan(req, InjectionStrategy::kvai);
    for (const auto& t : plan.transitions) {
        EXPECT_EQ(t.strategy, InjectionStrategy::kvai);
        EXPECT_EQ(t.source, StrategySource::override_flag);
        EXPECT_EQ(t.rationale, "override");
    }
    for (const auto& t : c.transcripts()) EXPECT_NE(t.agent, "ica");
}

TEST(Workflow, MockIsDeterministic) {
    MockBackend mock;
    AnimationRequest req{"a day passes over the city skyline", std::nullopt, 0, 4, 0};
    Controller a(mock), b(mock);
    const auto pa = a.plan(req), pb = b.plan(req);
    EXPECT_EQ(pa.prompts, pb.prompts);
    ASSERT_EQ(pa.n_t(), pb.n_t());
    for (int i = 0; i < pa.n_t(); ++i) EXPECT_EQ(pa.transitions[i].strategy, pb.transitions[i].strategy);
    EXPECT_EQ(pa.enhanced_initial_prompt, pb.enhanced_initial_prompt);
}

TEST(Retries, WrongCountIsRetriedThenFails) {
    const std::string three = fence(R"(["a", "b", "c"])");
    ScriptedBackend backend({three});
    Controller c(backend, 2);
    try {
        c.sia_decompose("a flower opens", 4);
        FAIL() << "expected PlanningError";
    } catch (const PlanningError& e) {
        EXPECT_EQ(e.raw_output(), three);
    }
    EXPECT_EQ(backend.calls(), 3u);
    ASSERT_EQ(c.transcripts().size(), 3u);
    for (const auto& t : c.transcripts()) EXPECT_FALSE(t.error.empty());
}

TEST(Retries, RecoversOnSecondAttempt) {
    ScriptedBackend backend({"no fence here", fence(R"(["x", "y"])")});
    Controller c(backend, 2);
    EXPECT_EQ(c.sia_decompose("anything", 1), (std::vector<std::string>{"x", "y"}));
    EXPECT_EQ(c.transcripts().size(), 2u);
}

TEST(Retries, PgaDroppingWordsIsRejected) {
    ScriptedBackend backend({fence(R"("a pretty picture")")});
    Controller c(backend, 0);
    EXPECT_THROW(c.pga_enhance("a wooden sculpture of a cat"), PlanningError);
}

TEST(Structure, WarnsOnDivergentPrompts) {
    EXPECT_TRUE(structure_warnings({"The meadow in spring", "The meadow in summer"}).empty());
    EXPECT_FALSE(structure_warnings({"A cat", "An enormous cathedral of glass rising above a silent frozen sea"}).empty());
}

TEST(Request, Validation) {
    EXPECT_THROW((AnimationRequest{"", std::nullopt, 1, 4, 0}.validate()), ConfigError);
    EXPECT_THROW((AnimationRequest{"x", std::nullopt, 1, 1, 0}.validate()), ConfigError);
    EXPECT_THROW((AnimationRequest{"x", std::nullopt, kMaxStages + 1, 4, 0}.validate()), ConfigError);
}

TEST(OpenAIBackend, TalksChatCompletions) {
    httplib::Server server;
    nlohmann::json seen;
    std::string auth;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen = nlohmann::json::parse(req.body);
        auth = req.get_header_value("Authorization");
        const nlohmann::json reply{{"choices", {{{"message", {{"role", "assistant"}, {"content", fence(R"("FAI")")}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    OpenAICompatibleBackend backend({"http://127.0.0.1:" + std::to_string(port) + "/v1", "k123", "test-model", 5.0});
    Controller c(backend);
    const auto label = c.ica_classify("a red car", "a blue car");
    server.stop();
    worker.join();

    EXPECT_EQ(label.strategy, InjectionStrategy::fai);
    EXPECT_EQ(seen.at("model"), "test-model");
    EXPECT_EQ(seen.at("messages").at(0).at("role"), "system");
    EXPECT_EQ(seen.at("messages").at(1).at("content"), "from: a red car\nto: a blue car\n");
    EXPECT_EQ(auth, "Bearer k123");
}

TEST(OpenAIBackend, RequiresEndpoint) {
    EXPECT_THROW(OpenAICompatibleBackend({"", "", "m", 1.0}), ConfigError);
    EXPECT_THROW(make_backend("nope"), ConfigError);
}
