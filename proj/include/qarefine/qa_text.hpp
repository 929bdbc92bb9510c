#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "qarefine/core.hpp"

namespace qarefine {

inline std::string choice_letter(std::size_t i) { return std::string(1, static_cast<char>('A' + i)); }

// Question followed by one "X) choice" line per option.
std::string question_with_choices(const QASample& s);

// Question, lettered choices and the claimed answer, as fed to the
// question-writing prompts.
std::string qa_block(const QASample& s);

// Choice index named by a letter ("B", "B)", "Choice B", "b") or by the
// choice text itself.
std::optional<std::size_t> resolve_choice(std::string_view answer, const QASample& s);

// First decimal number appearing in `text`, if any ("12 cm" -> 12).
std::optional<double> leading_number(std::string_view text);

}  // namespace qarefine
