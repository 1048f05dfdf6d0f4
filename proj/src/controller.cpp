#include "laser/controller.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>

#include "json.hpp"
#include "laser/errors.hpp"

namespace laser {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string capitalize(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
    return out;
}

const std::set<std::string>& stopwords() {
    static const std::set<std::string> s{"a", "an", "the", "of", "in", "on", "at", "to", "into", "and", "with",
                                         "is", "are", "its", "their", "his", "her", "by", "for", "from"};
    return s;
}

}  // namespace

std::vector<std::string> prompt_words(std::string_view text) {
    std::vector<std::string> out;
    std::string word;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!word.empty()) {
            out.push_back(std::move(word));
            word.clear();
        }
    }
    if (!word.empty()) out.push_back(std::move(word));
    return out;
}

void AnimationRequest::validate() const {
    if (trim(description).empty()) throw ConfigError("animation description is empty");
    if (n_f < 2) throw ConfigError("n_f must be at least 2 so both stage endpoints exist");
    if (n_t < 0 || n_t > kMaxStages) {
        throw ConfigError("n_t must lie in [1, " + std::to_string(kMaxStages) + "] (0 lets the planner choose)");
    }
}

std::string_view to_string(StrategySource source) {
    switch (source) {
        case StrategySource::ica: return "ica";
        case StrategySource::override_flag: return "override";
        case StrategySource::ablation: return "ablation";
    }
    return "?";
}

void StagePlan::validate() const {
    if (transitions.empty()) throw ConfigError("stage plan has no transitions");
    if (prompts.size() != transitions.size() + 1) {
        throw ConfigError("stage plan has " + std::to_string(prompts.size()) + " prompts for " +
                          std::to_string(transitions.size()) + " transitions");
    }
    for (std::size_t i = 0; i < transitions.size(); ++i) {
        if (transitions[i].index != static_cast<int>(i)) throw ConfigError("stage plan transitions out of order");
    }
    for (const auto& p : prompts) {
        if (trim(p).empty()) throw ConfigError("stage plan contains an empty prompt");
    }
}

// ---- parsing ---------------------------------------------------------------

AgentResponse parse_agent_response(std::string_view raw, ResponseSchema schema) {
    std::vector<std::size_t> fences;
    for (std::size_t pos = raw.find("```"); pos != std::string_view::npos; pos = raw.find("```", pos + 3)) {
        fences.push_back(pos);
    }
    if (fences.empty()) throw ParseError("response has no fenced block", 0);
    if (fences.size() % 2 != 0) throw ParseError("unterminated fenced block", fences.back());
    if (fences.size() > 2) throw ParseError("response has more than one fenced block", fences[2]);

    std::size_t body = fences[0] + 3;
    const std::size_t eol = raw.find('\n', body);
    if (eol == std::string_view::npos || eol > fences[1]) throw ParseError("fenced block has no body", body);
    const std::string info = trim(raw.substr(body, eol - body));
    if (!info.empty() && lower(info) != "json") throw ParseError("fenced block is tagged '" + info + "', expected json", body);
    body = eol + 1;
    const std::string_view content = raw.substr(body, fences[1] - body);

    json value;
    try {
        value = json::parse(content);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what(), body + (e.byte > 0 ? e.byte - 1 : 0));
    }

    switch (schema) {
        case ResponseSchema::prompt_list: {
            if (!value.is_array()) throw ParseError("expected a JSON array of prompts", body);
            std::vector<std::string> out;
            for (const auto& item : value) {
                if (!item.is_string() || trim(item.get<std::string>()).empty()) {
                    throw ParseError("prompt list entries must be non-empty strings", body);
                }
                out.push_back(trim(item.get<std::string>()));
            }
            return out;
        }
        case ResponseSchema::single_prompt: {
            if (!value.is_string() || trim(value.get<std::string>()).empty()) {
                throw ParseError("expected a non-empty JSON string", body);
            }
            return trim(value.get<std::string>());
        }
        case ResponseSchema::strategy_label: {
            StrategyLabel label;
            std::string name;
            if (value.is_string()) {
                name = value.get<std::string>();
            } else if (value.is_object() && value.contains("strategy") && value["strategy"].is_string()) {
                name = value["strategy"].get<std::string>();
                if (value.contains("rationale")) {
                    if (!value["rationale"].is_string()) throw ParseError("rationale must be a string", body);
                    label.rationale = value["rationale"].get<std::string>();
                }
            } else {
                throw ParseError("expected {\"strategy\": ...} or a strategy string", body);
            }
            const auto strategy = parse_strategy(name);
            if (!strategy || *strategy == InjectionStrategy::none) {
                throw ParseError("unknown strategy label '" + name + "'", body);
            }
            label.strategy = *strategy;
            return label;
        }
    }
    throw ParseError("unknown schema", 0);
}

// ---- mock backend ----------------------------------------------------------

namespace {

std::string field(const std::string& text, const std::string& key) {
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        const std::string_view line(text.data() + pos, end - pos);
        if (line.substr(0, key.size() + 1) == key + ":") return trim(line.substr(key.size() + 1));
        pos = end + 1;
    }
    return {};
}

std::string fenced(const json& value) { return "```json\n" + value.dump() + "\n```\n"; }

const std::vector<std::pair<std::string, std::vector<std::string>>>& decomposition_table() {
    static const std::vector<std::pair<std::string, std::vector<std::string>>> table{
        {"a year has passed on the spring meadow",
         {"The meadow in spring", "The meadow in summer", "The meadow in autumn", "The meadow in winter"}},
        {"a summer lake freezes over in winter", {"A lake in summer", "A lake in winter"}},
        {"a day passes over the city skyline",
         {"The city skyline at dawn", "The city skyline at noon", "The city skyline at sunset",
          "The city skyline at night"}},
        {"a dog lies down and then stands up", {"A dog sitting", "A dog lying", "A dog standing"}},
        {"a flower bud opens into full bloom", {"A closed flower bud", "A half open flower", "A fully open flower"}},
        {"a person raises their hand to wave",
         {"A person with arms down", "A person raising a hand", "A person waving a hand"}},
        {"a snowman melts in the sun",
         {"A snowman standing in the sun", "A melting snowman in the sun", "A puddle with a carrot in the sun"}},
    };
    return table;
}

std::vector<std::string> evenly_spaced(const std::vector<std::string>& prompts, int count) {
    if (count >= static_cast<int>(prompts.size())) return prompts;
    std::vector<std::string> out;
    const double step = static_cast<double>(prompts.size() - 1) / (count - 1);
    for (int i = 0; i < count; ++i) out.push_back(prompts[static_cast<std::size_t>(std::lround(i * step))]);
    return out;
}

std::vector<std::string> mock_decompose(const std::string& description, int n_t) {
    const std::string key = join(prompt_words(description));
    for (const auto& [k, prompts] : decomposition_table()) {
        if (k == key) return n_t > 0 ? evenly_spaced(prompts, n_t + 1) : prompts;
    }
    const int stages = n_t > 0 ? n_t : 1;
    static const std::regex change(R"(^\s*(.+?)\s+(turns into|becomes|transforms into|changes into)\s+(.+?)\s*\.?\s*$)",
                                   std::regex::icase);
    std::smatch m;
    std::string first, last;
    if (std::regex_match(description, m, change)) {
        first = capitalize(m[1].str());
        last = capitalize(m[3].str());
    } else {
        const std::string base = trim(description);
        first = base + ", at the beginning";
        last = base + ", at the end";
    }
    std::vector<std::string> out{first};
    for (int k = 1; k < stages; ++k) {
        out.push_back(first + ", stage " + std::to_string(k) + " of " + std::to_string(stages) + " toward " + lower(last));
    }
    out.push_back(last);
    return out;
}

const std::set<std::string>& appearance_lexicon() {
    static const std::set<std::string> s{
        // colours
        "red", "orange", "yellow", "green", "blue", "purple", "pink", "black", "white", "gray", "grey", "brown",
        "golden", "gold", "silver", "colorful", "pale", "dark", "bright",
        // materials and textures
        "wooden", "wood", "stone", "marble", "glass", "metal", "metallic", "bronze", "clay", "paper", "ice", "icy",
        "crystal", "plastic", "steel", "iron", "copper", "porcelain", "fabric", "rusty", "furry", "velvet",
        "frozen", "snowy", "mossy", "rotten",
        // styles
        "painting", "watercolor", "sketch", "cartoon", "oil", "pixel", "photo", "photograph", "anime",
        // seasons, times of day, weather
        "spring", "summer", "autumn", "fall", "winter", "dawn", "noon", "sunset", "sunrise", "dusk", "night",
        "day", "rainy", "sunny", "foggy", "cloudy"};
    return s;
}

const std::set<std::string>& pose_lexicon() {
    static const std::set<std::string> s{
        "sitting", "standing", "jumping", "running", "walking", "lying", "sleeping", "flying", "dancing",
        "kneeling", "crouching", "stretching", "raising", "raised", "waving", "turning", "rolling", "smiling",
        "laughing", "crying", "frowning", "opening", "open", "closed", "closing", "bending", "leaping",
        "swimming", "climbing", "reaching", "looking", "melting", "growing", "bloom", "blooming", "down", "up",
        "half", "fully", "spread", "folded", "curled", "squatting"};
    return s;
}

StrategyLabel mock_classify(const std::string& from, const std::string& to) {
    const auto a = prompt_words(from);
    const auto b = prompt_words(to);
    const std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::vector<std::string> changed;
    std::set_symmetric_difference(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(changed));
    bool appearance = false, pose = false, other = false;
    for (const auto& w : changed) {
        const bool ap = appearance_lexicon().count(w) > 0;
        const bool po = pose_lexicon().count(w) > 0;
        appearance = appearance || ap;
        pose = pose || po;
        other = other || (!ap && !po && stopwords().count(w) == 0);
    }
    if (appearance && !pose && !other) return {InjectionStrategy::fai, "appearance-only change"};
    if (pose && !appearance && !other) return {InjectionStrategy::kvai, "pose or shape change"};
    if (appearance && pose) return {InjectionStrategy::dai, "appearance and pose both change"};
    return {InjectionStrategy::dai, "subject or mixed change"};
}

}  // namespace

std::string MockBackend::complete(const std::string& system_prompt, const std::string& user_prompt) const {
    const std::string agent = field(system_prompt, "agent");
    if (agent == "SIA") {
        const std::string stages = field(user_prompt, "stages");
        int n_t = 0;
        if (!stages.empty() && std::isdigit(static_cast<unsigned char>(stages[0]))) n_t = std::stoi(stages);
        return fenced(mock_decompose(field(user_prompt, "description"), n_t));
    }
    if (agent == "PGA") return fenced(field(user_prompt, "prompt") + std::string(kQualitySuffix));
    if (agent == "ICA") {
        const auto label = mock_classify(field(user_prompt, "from"), field(user_prompt, "to"));
        return fenced(json{{"strategy", std::string(to_string(label.strategy))}, {"rationale", label.rationale}});
    }
    throw Error("mock backend: unknown agent '" + agent + "'");
}

// ---- controller ------------------------------------------------------------

std::vector<std::string> structure_warnings(const std::vector<std::string>& prompts) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i + 1 < prompts.size(); ++i) {
        const auto a = prompt_words(prompts[i]);
        const auto b = prompt_words(prompts[i + 1]);
        if (a.empty() || b.empty()) continue;
        const double ratio = static_cast<double>(std::min(a.size(), b.size())) / std::max(a.size(), b.size());
        const std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
        std::vector<std::string> shared;
        std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(shared));
        const double jaccard = static_cast<double>(shared.size()) / (sa.size() + sb.size() - shared.size());
        const std::string pair = "prompts " + std::to_string(i) + "/" + std::to_string(i + 1);
        if (ratio < 0.6) out.push_back(pair + ": lengths differ (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " words)");
        if (jaccard < 0.3) out.push_back(pair + ": little shared wording, sentence structure may diverge");
    }
    return out;
}

Controller::Controller(const CompletionBackend& backend, int max_retries)
    : backend_(backend), max_retries_(std::max(0, max_retries)) {}

AgentResponse Controller::ask(const AgentPrompt& prompt, const std::string& user, ResponseSchema schema,
                              const std::function<void(const AgentResponse&)>& check) {
    std::string last_raw, last_error;
    for (int attempt = 1; attempt <= max_retries_ + 1; ++attempt) {
        Transcript t{std::string(prompt.agent), std::string(prompt.version), attempt, user, {}, {}};
        try {
            t.response = backend_.complete(std::string(prompt.text), user);
            last_raw = t.response;
            AgentResponse parsed = parse_agent_response(t.response, schema);
            if (check) check(parsed);
            transcripts_.push_back(std::move(t));
            return parsed;
        } catch (const Error& e) {
            t.error = e.what();
            last_error = e.what();
            transcripts_.push_back(std::move(t));
        }
    }
    throw PlanningError(std::string(prompt.agent) + " failed after " + std::to_string(max_retries_ + 1) +
                            " attempts: " + last_error,
                        last_raw);
}

std::vector<std::string> Controller::sia_decompose(const std::string& description, int n_t) {
    if (trim(description).empty()) throw ConfigError("SIA: empty description");
    if (n_t < 0 || n_t > kMaxStages) throw ConfigError("SIA: n_t outside [0, " + std::to_string(kMaxStages) + "]");
    const std::string user = "description: " + trim(description) + "\nstages: " +
                             (n_t > 0 ? std::to_string(n_t) : "auto (at most " + std::to_string(kMaxStages) + ")") + "\n";
    auto parsed = ask(sia_prompt(), user, ResponseSchema::prompt_list, [n_t](const AgentResponse& r) {
        const auto& prompts = std::get<std::vector<std::string>>(r);
        if (n_t > 0 && static_cast<int>(prompts.size()) != n_t + 1) {
            throw ConfigError("expected " + std::to_string(n_t + 1) + " prompts, got " + std::to_string(prompts.size()));
        }
        if (prompts.size() < 2 || static_cast<int>(prompts.size()) > kMaxStages + 1) {
            throw ConfigError("expected 2 to " + std::to_string(kMaxStages + 1) + " prompts, got " +
                              std::to_string(prompts.size()));
        }
    });
    return std::get<std::vector<std::string>>(std::move(parsed));
}

std::string Controller::pga_enhance(const std::string& prompt) {
    if (trim(prompt).empty()) throw ConfigError("PGA: empty prompt");
    const std::string user = "prompt: " + trim(prompt) + "\n";
    std::vector<std::string> required;
    for (auto& w : prompt_words(prompt)) {
        if (w.size() >= 3 && stopwords().count(w) == 0) required.push_back(w);
    }
    auto parsed = ask(pga_prompt(), user, ResponseSchema::single_prompt, [&required](const AgentResponse& r) {
        const auto words = prompt_words(std::get<std::string>(r));
        const std::set<std::string> have(words.begin(), words.end());
        for (const auto& w : required) {
            if (!have.count(w)) throw ConfigError("enhanced prompt dropped '" + w + "'");
        }
    });
    return std::get<std::string>(std::move(parsed));
}

StrategyLabel Controller::ica_classify(const std::string& from, const std::string& to) {
    if (trim(from).empty() || trim(to).empty()) throw ConfigError("ICA: empty prompt");
    const std::string user = "from: " + trim(from) + "\nto: " + trim(to) + "\n";
    return std::get<StrategyLabel>(ask(ica_prompt(), user, ResponseSchema::strategy_label, nullptr));
}

StagePlan Controller::plan(const AnimationRequest& request, std::optional<InjectionStrategy> override_strategy) {
    request.validate();
    return plan_from_prompts(request, sia_decompose(request.description, request.n_t), override_strategy);
}

StagePlan Controller::plan_from_prompts(const AnimationRequest& request, std::vector<std::string> prompts,
                                        std::optional<InjectionStrategy> override_strategy) {
    request.validate();
    if (request.n_t > 0 && static_cast<int>(prompts.size()) != request.n_t + 1) {
        throw ConfigError("request asks for " + std::to_string(request.n_t) + " stages but " +
                          std::to_string(prompts.size()) + " prompts were given");
    }
    StagePlan plan;
    plan.prompts = std::move(prompts);
    if (plan.prompts.size() < 2) throw ConfigError("a stage plan needs at least two prompts");
    if (!request.input_image) plan.enhanced_initial_prompt = pga_enhance(plan.prompts.front());
    for (std::size_t i = 0; i + 1 < plan.prompts.size(); ++i) {
        Transition t;
        t.index = static_cast<int>(i);
        if (override_strategy) {
            t.strategy = *override_strategy;
            t.source = StrategySource::override_flag;
            t.rationale = "override";
        } else {
            const auto label = ica_classify(plan.prompts[i], plan.prompts[i + 1]);
            t.strategy = label.strategy;
            t.rationale = label.rationale;
        }
        plan.transitions.push_back(std::move(t));
    }
    plan.warnings = structure_warnings(plan.prompts);
    plan.validate();
    return plan;
}

}  // namespace laser
