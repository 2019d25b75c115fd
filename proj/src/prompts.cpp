#include "pu/prompts.hpp"

#include <sstream>

namespace pu {

namespace {

void append_knowledge(std::ostringstream& os, std::span<const Passage> passages) {
  os << "Knowledge:\n";
  for (std::size_t k = 0; k < passages.size(); ++k) {
    os << '[' << (k + 1) << "] " << passages[k].text << '\n';
  }
}

void append_assessment(std::ostringstream& os, const std::string& question, const std::string& most_likely,
                       std::span<const std::string> samples) {
  os << "Question: " << question << '\n';
  os << "Brainstormed Answers: " << most_likely << '\n';
  for (const auto& s : samples) os << s << '\n';
  os << "Possible answer: " << most_likely << '\n';
  os << "Is the possible answer:\n";
  os << "A) True\n";
  os << "B) False\n";
  os << "The possible answer is:";
}

constexpr const char* kJudgePreamble =
    "You need to check whether the prediction of a question-answering system to a question is correct. "
    "You should make the judgment based on a list of ground truth answers provided to you. Your response "
    "should be \"correct\" if the prediction is correct or \"incorrect\" if the prediction is wrong.\n"
    "\n"
    "Question: Who authored The Taming of the Shrew (published in 2002)?\n"
    "Ground truth: [\"William Shakespeare\", \"Roma Gill\"]\n"
    "Prediction: W Shakespeare\n"
    "Correctness: correct\n"
    "\n"
    "Question: Who authored The Taming of the Shrew (published in 2002)?\n"
    "Ground truth: [\"William Shakespeare\", \"Roma Gill\"]\n"
    "Prediction: Roma Gill and W Shakespeare\n"
    "Correctness: correct\n"
    "\n"
    "Question: Who authored The Taming of the Shrew (published in 2002)?\n"
    "Ground truth: [\"William Shakespeare\", \"Roma Gill\"]\"\n"
    "Prediction: Roma Shakespeare\n"
    "Correctness: incorrect\n"
    "\n"
    "Question: What country is Maharashtra Metro Rail Corporation Limited located in?\n"
    "Ground truth: [\"India\"]\n"
    "Prediction: Maharashtra\n"
    "Correctness: incorrect\n"
    "\n"
    "Question: What's the job of Song Kang-ho in Parasite (2019)?\n"
    "Ground truth: [\"actor\"]\n"
    "Prediction: He plays the role of Kim Ki-taek, the patriarch of the Kim family.\n"
    "Correctness: correct\n"
    "\n"
    "Question: Which era did Michael Oakeshott belong to?\n"
    "Ground truth: [\"20th-century philosophy\"]\n"
    "Prediction: 20th century.\"\n"
    "Correctness: correct\n"
    "\n"
    "Question: Edward Tise (known for Full Metal Jacket (1987)) is in what department?\n"
    "Ground truth: [\"sound department\"]\n"
    "Prediction: 2nd Infantry Division, United States Army\n"
    "Correctness: incorrect\n"
    "\n"
    "Question: What wine region is Finger Lakes AVA a part of?\n"
    "Ground truth: [\"New York wine\"]\n"
    "Prediction: Finger Lakes AVA\n"
    "Correctness: incorrect\n"
    "\n";

}  // namespace

Prompt qa_prompt(const std::string& question, std::span<const Passage> passages) {
  std::ostringstream os;
  append_knowledge(os, passages);
  os << '\n';
  os << "Answer the following question with a very short phrase.\n";
  os << '\n';
  os << "Question: " << question;
  return Prompt{os.str()};
}

Prompt empty_prompt() { return Prompt{}; }

void to_json(nlohmann::json& j, const FewShotBlock& v) {
  j = nlohmann::json{{"question", v.question},
                     {"most_likely", v.most_likely},
                     {"samples", v.samples},
                     {"is_correct", v.is_correct}};
}

void from_json(const nlohmann::json& j, FewShotBlock& v) {
  j.at("question").get_to(v.question);
  j.at("most_likely").get_to(v.most_likely);
  j.at("samples").get_to(v.samples);
  j.at("is_correct").get_to(v.is_correct);
}

Prompt ptrue_prompt(std::span<const FewShotBlock> few_shot, const std::string& question,
                    std::span<const Passage> passages, const std::string& most_likely,
                    std::span<const std::string> samples, const PTrueChoices& choices) {
  std::ostringstream os;
  for (const auto& block : few_shot) {
    append_assessment(os, block.question, block.most_likely, block.samples);
    os << ' ' << (block.is_correct ? choices.true_label : choices.false_label) << '\n';
    os << '\n';
  }
  append_knowledge(os, passages);
  os << '\n';
  append_assessment(os, question, most_likely, samples);
  return Prompt{os.str()};
}

std::string render_gold_list(std::span<const std::string> gold_answers) {
  std::string out = "[";
  for (std::size_t i = 0; i < gold_answers.size(); ++i) {
    if (i > 0) out += ", ";
    out += nlohmann::json(gold_answers[i]).dump();
  }
  out += "]";
  return out;
}

Prompt judge_prompt(const std::string& question, std::span<const std::string> gold_answers,
                    const std::string& prediction) {
  std::ostringstream os;
  os << kJudgePreamble;
  os << "Question: " << question << '\n';
  os << "Ground truth: " << render_gold_list(gold_answers) << '\n';
  os << "Prediction: " << prediction << '\n';
  os << "Correctness:";
  return Prompt{os.str()};
}

}  // namespace pu
