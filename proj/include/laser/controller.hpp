#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "laser/image.hpp"
#include "laser/injection.hpp"
#include "laser/prompts.hpp"

namespace laser {

constexpr int kMaxStages = 6;

struct AnimationRequest {
    std::string description;
    std::optional<Image> input_image;
    int n_t = 0;  // 0 lets SIA choose, up to kMaxStages
    int n_f = 12;
    std::uint64_t seed = 0;

    void validate() const;
};

// How a transition's strategy was decided.
enum class StrategySource { ica, override_flag, ablation };
std::string_view to_string(StrategySource source);

struct Transition {
    int index = 0;
    InjectionStrategy strategy = InjectionStrategy::dai;
    StrategySource source = StrategySource::ica;
    std::string rationale;
};

struct StagePlan {
    std::vector<std::string> prompts;  // P_0..P_{n_t}
    std::vector<Transition> transitions;
    std::optional<std::string> enhanced_initial_prompt;
    std::vector<std::string> warnings;

    int n_t() const { return static_cast<int>(transitions.size()); }
    // Throws ConfigError unless |prompts| = n_t + 1 and strategies are set.
    void validate() const;
};

class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;
    virtual std::string name() const = 0;
    virtual std::string complete(const std::string& system_prompt, const std::string& user_prompt) const = 0;
};

// Offline, rule-based stand-in. Reads the agent from the "agent:" line of the
// system prompt and the request fields from the user prompt.
class MockBackend : public CompletionBackend {
public:
    static constexpr std::string_view kQualitySuffix =
        ", highly detailed, soft natural lighting, rich textures, sharp focus, digital painting";

    std::string name() const override { return "mock"; }
    std::string complete(const std::string& system_prompt, const std::string& user_prompt) const override;
};

// Chat-completions client; endpoint, key and model come from LASER_LLM_ENDPOINT,
// LASER_LLM_API_KEY and LASER_LLM_MODEL unless given explicitly.
class OpenAICompatibleBackend : public CompletionBackend {
public:
    struct Options {
        std::string endpoint;  // base URL, e.g. https://api.openai.com/v1
        std::string api_key;
        std::string model = "gpt-4";
        double timeout_seconds = 60.0;
    };

    explicit OpenAICompatibleBackend(Options options);
    static Options from_environment();

    std::string name() const override { return "openai-compatible"; }
    std::string complete(const std::string& system_prompt, const std::string& user_prompt) const override;

private:
    Options options_;
};

// "mock" or "openai-compatible".
std::unique_ptr<CompletionBackend> make_backend(std::string_view name);

enum class ResponseSchema { prompt_list, single_prompt, strategy_label };

struct StrategyLabel {
    InjectionStrategy strategy = InjectionStrategy::dai;
    std::string rationale;
};

using AgentResponse = std::variant<std::vector<std::string>, std::string, StrategyLabel>;

// Strict parse of the single fenced block in `raw`. Throws ParseError with the
// byte offset of the problem.
AgentResponse parse_agent_response(std::string_view raw, ResponseSchema schema);

struct Transcript {
    std::string agent;
    std::string prompt_version;
    int attempt = 0;
    std::string user_prompt;
    std::string response;
    std::string error;  // empty on success
};

class Controller {
public:
    explicit Controller(const CompletionBackend& backend, int max_retries = 2);

    // Exactly n_t + 1 prompts, or 2..kMaxStages+1 when n_t is 0.
    std::vector<std::string> sia_decompose(const std::string& description, int n_t);
    std::string pga_enhance(const std::string& prompt);
    StrategyLabel ica_classify(const std::string& from, const std::string& to);

    // PGA runs iff the request has no image; ICA runs once per adjacent pair
    // unless `override_strategy` is set.
    StagePlan plan(const AnimationRequest& request, std::optional<InjectionStrategy> override_strategy = {});
    // Same workflow with SIA skipped: `prompts` are P_0..P_{n_t} as given.
    StagePlan plan_from_prompts(const AnimationRequest& request, std::vector<std::string> prompts,
                                std::optional<InjectionStrategy> override_strategy = {});

    const std::vector<Transcript>& transcripts() const { return transcripts_; }

private:
    AgentResponse ask(const AgentPrompt& prompt, const std::string& user, ResponseSchema schema,
                      const std::function<void(const AgentResponse&)>& check);

    const CompletionBackend& backend_;
    int max_retries_;
    std::vector<Transcript> transcripts_;
};

// Soft structural-consistency check between adjacent prompts; returns warnings.
std::vector<std::string> structure_warnings(const std::vector<std::string>& prompts);

// Words of a prompt: lowercase alphanumeric runs.
std::vector<std::string> prompt_words(std::string_view text);

}  // namespace laser
