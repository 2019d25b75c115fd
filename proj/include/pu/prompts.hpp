#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pu/core_types.hpp"

namespace pu {

// A single user turn. The chat template is applied by the serving backend.
struct Prompt {
  std::string user;

  friend bool operator==(const Prompt&, const Prompt&) = default;
};

// Passage list plus question, as sent to the QA model.
[[nodiscard]] Prompt qa_prompt(const std::string& question, std::span<const Passage> passages);

// Prompt with no context at all; used for unconditional token scoring.
[[nodiscard]] Prompt empty_prompt();

// One resolved in-context block for the self-assessment prompt.
struct FewShotBlock {
  std::string question;
  std::string most_likely;
  std::vector<std::string> samples;
  bool is_correct = false;
};

void to_json(nlohmann::json& j, const FewShotBlock& v);
void from_json(const nlohmann::json& j, FewShotBlock& v);

struct PTrueChoices {
  std::string true_label = "A";
  std::string false_label = "B";
};

inline constexpr std::size_t kDefaultFewShotCount = 20;

[[nodiscard]] Prompt ptrue_prompt(std::span<const FewShotBlock> few_shot, const std::string& question,
                                  std::span<const Passage> passages, const std::string& most_likely,
                                  std::span<const std::string> samples,
                                  const PTrueChoices& choices = {});

// Gold answers rendered as ["a", "b"].
[[nodiscard]] std::string render_gold_list(std::span<const std::string> gold_answers);

[[nodiscard]] Prompt judge_prompt(const std::string& question, std::span<const std::string> gold_answers,
                                  const std::string& prediction);

}  // namespace pu
