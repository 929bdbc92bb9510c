#include "qarefine/qa_text.hpp"

#include <cctype>
#include <cstdlib>

namespace qarefine {

std::string question_with_choices(const QASample& s) {
  std::string out = s.question;
  for (std::size_t i = 0; i < s.choices.size(); ++i) out += "\n" + choice_letter(i) + ") " + s.choices[i];
  return out;
}

std::string qa_block(const QASample& s) {
  std::string out = "Question: " + s.question + "\nChoices:";
  for (std::size_t i = 0; i < s.choices.size(); ++i) out += "\n" + choice_letter(i) + ") " + s.choices[i];
  out += "\nAnswer: " + choice_letter(s.answer_index) + ") " + s.correct_choice;
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

std::optional<std::size_t> resolve_choice(std::string_view answer, const QASample& s) {
  std::string_view a = trim(answer);
  for (std::size_t i = 0; i < s.choices.size(); ++i)
    if (a == s.choices[i]) return i;
  if (a.size() >= 7 && (a.substr(0, 7) == "Choice " || a.substr(0, 7) == "choice ")) a = trim(a.substr(7));
  // "B", "B)", "B.", "B) text", "B - reason".
  if (!a.empty() && std::isalpha(static_cast<unsigned char>(a[0])) &&
      (a.size() == 1 || !std::isalnum(static_cast<unsigned char>(a[1])))) {
    std::size_t idx = static_cast<std::size_t>(std::toupper(static_cast<unsigned char>(a[0])) - 'A');
    if (idx < s.choices.size()) return idx;
  }
  return std::nullopt;
}

std::optional<double> leading_number(std::string_view text) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    bool starts = std::isdigit(static_cast<unsigned char>(c)) ||
                  ((c == '-' || c == '+' || c == '.') && i + 1 < text.size() &&
                   std::isdigit(static_cast<unsigned char>(text[i + 1])));
    if (!starts) continue;
    if (i > 0 && std::isalpha(static_cast<unsigned char>(text[i - 1]))) continue;
    std::string tail(text.substr(i));
    char* end = nullptr;
    double v = std::strtod(tail.c_str(), &end);
    if (end != tail.c_str()) return v;
  }
  return std::nullopt;
}

}  // namespace qarefine
