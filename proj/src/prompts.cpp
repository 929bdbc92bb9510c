#include "qarefine/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>

#include "qarefine/core.hpp"

namespace qarefine {

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Accepts name, name[index] and (a, b).
bool is_placeholder(std::string_view body) {
  if (body.empty()) return false;
  if (body.front() == '(') {
    if (body.back() != ')') return false;
    for (char c : body.substr(1, body.size() - 2))
      if (!ident_char(c) && c != ',' && c != ' ') return false;
    return true;
  }
  if (!ident_start(body.front())) return false;
  std::size_t i = 0;
  while (i < body.size() && ident_char(body[i])) ++i;
  if (i == body.size()) return true;
  if (body[i] != '[' || body.back() != ']') return false;
  for (char c : body.substr(i + 1, body.size() - i - 2))
    if (!ident_char(c)) return false;
  return body.size() - i > 2;
}

template <class F>
void scan(std::string_view text, F&& on_placeholder, std::string* out) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t open = text.find('{', pos);
    if (open == std::string_view::npos) break;
    std::size_t close = text.find_first_of("}\n{", open + 1);
    if (close != std::string_view::npos && text[close] == '}' &&
        is_placeholder(text.substr(open + 1, close - open - 1))) {
      if (out) out->append(text.substr(pos, open - pos));
      on_placeholder(std::string(text.substr(open + 1, close - open - 1)));
      pos = close + 1;
    } else {
      if (out) out->append(text.substr(pos, open + 1 - pos));
      pos = open + 1;
    }
  }
  if (out && pos < text.size()) out->append(text.substr(pos));
}

}  // namespace

std::vector<std::string> placeholders_in(std::string_view text) {
  std::vector<std::string> names;
  scan(text, [&](std::string name) {
    if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(std::move(name));
  }, nullptr);
  return names;
}

std::string render_template(std::string_view text, const Vars& vars) {
  std::string out;
  out.reserve(text.size() + 256);
  scan(text, [&](const std::string& name) {
    auto it = vars.find(name);
    if (it == vars.end()) throw ArgumentError("template placeholder {" + name + "} has no value");
    out += it->second;
  }, &out);
  return out;
}

std::string PromptLibrary::default_dir() {
  if (const char* env = std::getenv("QAREFINE_PROMPT_DIR")) return env;
  return QAREFINE_PROMPT_DIR;
}

PromptLibrary PromptLibrary::load(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ConfigError("prompt directory '" + dir + "' does not exist");
  PromptLibrary lib;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".txt") continue;
    lib.texts_[entry.path().stem().string()] = read_file(entry.path().string());
  }
  if (lib.has(tmpl::kDistractorRewriting) && lib.has("distractor_format"))
    lib.texts_[tmpl::kDistractorRewritingJson] =
        lib.texts_[tmpl::kDistractorRewriting] + lib.texts_["distractor_format"];
  return lib;
}

PromptLibrary PromptLibrary::load_default() { return load(default_dir()); }

const std::string& PromptLibrary::text(const std::string& id) const {
  auto it = texts_.find(id);
  if (it == texts_.end()) throw ConfigError("unknown prompt template '" + id + "'");
  return it->second;
}

std::string PromptLibrary::render(const std::string& id, const Vars& vars) const {
  return render_template(text(id), vars);
}

std::vector<std::string> PromptLibrary::ids() const {
  std::vector<std::string> out;
  for (const auto& kv : texts_) out.push_back(kv.first);
  return out;
}

}  // namespace qarefine
