#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace stepforge::templates {

enum class TemplateId { Reward, Critique, FindFacts, JudgeContradiction };

/// Accepts "reward", "critique", "find_facts", "judge_contradiction".
TemplateId parse_template_id(std::string_view name);
std::string_view name_of(TemplateId id);

std::string_view template_text(TemplateId id);

/// Placeholder names (without the surrounding '$') used by the template.
std::vector<std::string> placeholders(TemplateId id);

/// Literal substitution of $NAME$ placeholders in a single pass, so slot
/// values are never themselves re-scanned. Every placeholder of the template
/// must be supplied and no others; otherwise TemplateError.
std::string render(TemplateId id, const std::map<std::string, std::string>& slots);
std::string render(std::string_view template_name, const std::map<std::string, std::string>& slots);

/// The seven rating principles, index 0 = Principle1.
const std::vector<std::string>& principles();

}  // namespace stepforge::templates
