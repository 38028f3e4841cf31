#include "stepforge/templates.hpp"

#include <set>

#include "stepforge/errors.hpp"

namespace stepforge::templates {

namespace {

constexpr std::string_view kReward =
    R"(You are an expert at evaluating the quality of text.

As an impartial evaluator, please assess the assistant’s response to a user’s requirements. Now, you will receive specific principles that provide the criteria for evaluating the response. Principles begin,

Principle1: The response is accurate and free of factual errors.

Principle2: The response meets the user’s purpose and needs.

Principle3: The response is non-toxic and safe.

Principle4: The response meets the user’s formatting requirements and maintains logical consistency.

Principle5: The response contains diverse and comprehensive information with minimal repetition.

Principle6: The response provides an excellent reading experience.

Principle7: The response is insightful and provides the user with additional avenues for thought. Principles end.

In the next, you will receive detailed guidelines to help you rate the response according to each principle. Now, guidelines begin

5: A perfect response with no improvement needed. The content is comprehensive, accurate, clear, and well-structured. The response fully addresses all aspects of the question or need without any omissions or errors.

4: A very good response with minor issues. It is almost perfect but may have slight areas that could be improved, such as minor details that are unclear or a small omission. Overall, it still meets the need effectively.

3: An acceptable response that generally meets the question or need but has noticeable shortcomings. The content might be incomplete or unclear, or there may be minor grammar or logical errors. It needs improvement but is still functional.

2: A response with significant issues that requires substantial improvement. The content is incomplete, unclear, or contains major errors, omissions, or misunderstandings. It does not fully satisfy the request.

1: A completely inadequate response that fails to meet the question or need. It contains serious errors or misunderstandings and cannot provide useful help.

Guidelines end.

Now, you will receive the user request and the assistant's response to evaluate.

<User Request>

$INST$

</User Request>

<Response>

$RESPONSE$

</Response>

Your task is to evaluate the quality of the response and assign a rating with distinguishable differentiation for each principle. When rating, please carefully read the guidelines and ensure your ratings fully adhere to them. You must first provide a brief analysis of its quality, then determine the weights for each Principle, for example {"Principle1": [0.2,0.2,0.2,0.2,0.2]} represents the final score is 0.2 * 1 + 0.2 * 2 + 0.2 * 3 + 0.2 * 4 + 0.2 * 5 = 3. The output must strictly follow the JSON format: {"Analysis":..., "Principle1":[..,..,..,..,..], "Principle2":[..,..,..,..,..], "Principle3":[..,..,..,..,..], "Principle4":[..,..,..,..,..], "Principle5":[..,..,..,..,..], "Principle6":[..,..,..,..,..], "Principle7":[..,..,..,..,..]}. You do not need to consider whether the response meets the user's length requirements in your evaluation. Ensure that only one integer or float is output for each principle.)";

constexpr std::string_view kCritique =
    R"(You are an expert at evaluating the quality of text. In the following, you will revice a user request, one principle and two candidates:

<User Request>

$INST$

</User Request>

<Principle>

$PRINCIPLE$

</Principle>

<Candidate1>

$CANDIDATE1$

</Candidate1>

<Candidate2>

$CANDIDATE2$

</Candidate2>

Now, your task is
1. Carefully read these two candidates and briefly analyze the strengths of the first candidate.
2. Provide a "Justification" explaining why it scores higher.
3. Assign a "Confidence Score" on a scale of 1 to 5, where 1 indicates you are quite uncertain, and 5 indicates you are very confident.
4. Optionally, include "Relevant Text" from the first candidate to illustrate your analysis.
5. Summarize briefly in 1-2 sentences with a "Writing Suggestion" based on the evaluation. The output must strictly follow the JSON format: {"Analysis":..., "Justification":..., "Writing Suggestion":..., "Confidence Score":...,"Relevant Text":...}. Ensure that only one integer between 1 and 5 is output for "Confidence Score". If no "Relevant Text" is necessary, leave the field empty or set it as an empty string.)";

constexpr std::string_view kFindFacts =
    R"(You're an expert in natural language processing and information retrieval. You will receive a response. Your task is to extract factual statements from the response provided.

Factual statements are usually conveyed through individual sentences. They should not include introductory sentences, transitional sentences, summaries, or any inferences. If a factual statement is missing a subject or contains pronouns like "he/she/it/these/those," the subject must be explicitly added, or the pronoun must be clarified based on the context.

Now, please process the following AI assistant’s response:

<Response>

$RESPONSE$

</Response>

Please carefully read and analyze the given content. Then, breaking the factual content. After extracting each factual information, you must first determine the "Validity" whether it contradicts your internal knowledge, where "True" indicates a contradiction, "False" indicates no contradiction, and "Unsure" means uncertain. Provide the relevant "Evidence" accordingly. Then, output the result in the following format: {"Analysis":..., "Fact1":{"Content":...,"Validity":...,"Evidence":...}, "Fact2":{"Content":...,"Validity":...,"Evidence":...},...}. Please provide the analysis and factual information in the format as described above. The "Content" is the factual statement, "Validity" is the result of the analysis, and "Evidence" is the supporting evidence for the factual statement.)";

constexpr std::string_view kJudgeContradiction =
    R"(You are an expert at evaluating text. You will receive factual statements along with a related response. Your task is to carefully evaluate whether the response contradicts the factual statement. Please use the following principles to generate your assessment:

Contradict: You can find strong evidence indicating factual inaccuracies in the response that are inconsistent with the given factual statement.

Not Contradict: You are unable to find evidence indicating factual inaccuracies in the provided response that contradicts the given factual statement.
Ensure that you do not use any information or knowledge beyond the response provided, and only check whether the statement is supported by the response.

Now, please refer to the principles to give your judgement:

<Statement>

$STATEMENT$

</Statement>

<Response>

$RESPONSE$

</Response>

You must provide an analysis first, followed by the judgement. The output must strictly follow the JSON format: {"Analysis":..., "Judgement":...,"Evidence":...}.)";

bool is_placeholder_char(char c) { return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9'); }

}  // namespace

TemplateId parse_template_id(std::string_view name) {
  if (name == "reward") return TemplateId::Reward;
  if (name == "critique") return TemplateId::Critique;
  if (name == "find_facts") return TemplateId::FindFacts;
  if (name == "judge_contradiction") return TemplateId::JudgeContradiction;
  throw TemplateError("unknown template id '" + std::string(name) + "'");
}

std::string_view name_of(TemplateId id) {
  switch (id) {
    case TemplateId::Reward:
      return "reward";
    case TemplateId::Critique:
      return "critique";
    case TemplateId::FindFacts:
      return "find_facts";
    case TemplateId::JudgeContradiction:
      return "judge_contradiction";
  }
  throw TemplateError("unknown template id");
}

std::string_view template_text(TemplateId id) {
  switch (id) {
    case TemplateId::Reward:
      return kReward;
    case TemplateId::Critique:
      return kCritique;
    case TemplateId::FindFacts:
      return kFindFacts;
    case TemplateId::JudgeContradiction:
      return kJudgeContradiction;
  }
  throw TemplateError("unknown template id");
}

std::vector<std::string> placeholders(TemplateId id) {
  switch (id) {
    case TemplateId::Reward:
      return {"INST", "RESPONSE"};
    case TemplateId::Critique:
      return {"INST", "PRINCIPLE", "CANDIDATE1", "CANDIDATE2"};
    case TemplateId::FindFacts:
      return {"RESPONSE"};
    case TemplateId::JudgeContradiction:
      return {"STATEMENT", "RESPONSE"};
  }
  throw TemplateError("unknown template id");
}

std::string render(TemplateId id, const std::map<std::string, std::string>& slots) {
  const auto names = placeholders(id);
  const std::set<std::string> expected(names.begin(), names.end());
  for (const auto& name : names) {
    if (!slots.count(name)) {
      throw TemplateError("template '" + std::string(name_of(id)) + "' is missing slot $" + name + "$");
    }
  }
  for (const auto& [name, value] : slots) {
    if (!expected.count(name)) {
      throw TemplateError("template '" + std::string(name_of(id)) + "' has no slot $" + name + "$");
    }
  }

  const std::string_view text = template_text(id);
  std::string out;
  out.reserve(text.size() + 256);
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '$') {
      std::size_t j = i + 1;
      while (j < text.size() && is_placeholder_char(text[j])) ++j;
      if (j < text.size() && text[j] == '$' && j > i + 1) {
        const std::string name(text.substr(i + 1, j - i - 1));
        const auto it = slots.find(name);
        if (it == slots.end()) throw TemplateError("unexpected placeholder $" + name + "$");
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out += text[i++];
  }
  return out;
}

std::string render(std::string_view template_name, const std::map<std::string, std::string>& slots) {
  return render(parse_template_id(template_name), slots);
}

const std::vector<std::string>& principles() {
  static const std::vector<std::string> kPrinciples{
      "The response is accurate and free of factual errors.",
      "The response meets the user’s purpose and needs.",
      "The response is non-toxic and safe.",
      "The response meets the user’s formatting requirements and maintains logical consistency.",
      "The response contains diverse and comprehensive information with minimal repetition.",
      "The response provides an excellent reading experience.",
      "The response is insightful and provides the user with additional avenues for thought.",
  };
  return kPrinciples;
}

}  // namespace stepforge::templates
