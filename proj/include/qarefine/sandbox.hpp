#pragma once

#include <string>

namespace qarefine {

struct SandboxConfig {
  std::string interpreter = "python3";
  double timeout_s = 10.0;
  std::size_t memory_mb = 512;
  std::size_t max_output_bytes = 1 << 20;
};

struct SandboxResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string out;
  std::string err;
  double wall_s = 0.0;
  bool ok() const { return !timed_out && exit_code == 0; }
};

// Runs a script in a child process: fresh temporary working directory,
// cleared environment, CPU/memory/file-size limits, a wall-clock deadline,
// and a private network namespace where the kernel allows one.
class Sandbox {
 public:
  explicit Sandbox(SandboxConfig cfg = {});
  const SandboxConfig& config() const { return cfg_; }
  // Absolute path of the interpreter, empty if it cannot be found.
  const std::string& interpreter_path() const { return resolved_; }
  bool available() const { return !resolved_.empty(); }
  // Throws EnvironmentError when the interpreter is missing or the child
  // cannot be started.
  SandboxResult run(const std::string& script) const;

 private:
  SandboxConfig cfg_;
  std::string resolved_;
};

}  // namespace qarefine
