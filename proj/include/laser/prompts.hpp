#pragma once

#include <string>
#include <string_view>

namespace laser {

// Versioned agent system prompts, embedded from resources/prompts at build time.
struct AgentPrompt {
    std::string_view agent;    // "sia", "pga", "ica"
    std::string_view version;  // "v1"
    std::string_view text;

    std::string sha256() const;
};

const AgentPrompt& sia_prompt();
const AgentPrompt& pga_prompt();
const AgentPrompt& ica_prompt();

}  // namespace laser
