#include "qarefine/sandbox.hpp"

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "qarefine/errors.hpp"

namespace qarefine {

namespace fs = std::filesystem;

namespace {

std::string resolve(const std::string& name) {
  if (name.empty()) return {};
  if (name.find('/') != std::string::npos) return access(name.c_str(), X_OK) == 0 ? fs::absolute(name).string() : "";
  const char* path = std::getenv("PATH");
  std::istringstream dirs(path ? path : "/usr/local/bin:/usr/bin:/bin");
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    if (dir.empty()) continue;
    fs::path p = fs::path(dir) / name;
    if (access(p.c_str(), X_OK) == 0) return p.string();
  }
  return {};
}

struct TempDir {
  fs::path path;
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "qarefine-sbx-XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) throw EnvironmentError(std::string("cannot create sandbox directory: ") + std::strerror(errno));
    path = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

}  // namespace

Sandbox::Sandbox(SandboxConfig cfg) : cfg_(std::move(cfg)), resolved_(resolve(cfg_.interpreter)) {}

SandboxResult Sandbox::run(const std::string& script) const {
  if (!available()) throw EnvironmentError("sandbox interpreter '" + cfg_.interpreter + "' not found");
  TempDir dir;
  {
    std::ofstream f(dir.path / "script.py", std::ios::binary);
    f << script;
    if (!f) throw EnvironmentError("cannot write sandbox script");
  }

  // Everything the child needs is built before fork; after fork only
  // async-signal-safe calls are made.
  std::string home = "HOME=" + dir.path.string();
  std::vector<std::string> env_s = {"PATH=/usr/bin:/bin", home, "LANG=C.UTF-8", "PYTHONDONTWRITEBYTECODE=1"};
  std::vector<char*> envp;
  for (auto& s : env_s) envp.push_back(s.data());
  envp.push_back(nullptr);
  std::string interp = resolved_, flag_i = "-I", script_name = "script.py";
  std::vector<char*> argv = {interp.data(), flag_i.data(), script_name.data(), nullptr};
  std::string cwd = dir.path.string();
  const rlim_t mem = static_cast<rlim_t>(cfg_.memory_mb) * 1024 * 1024;
  const rlim_t cpu = static_cast<rlim_t>(cfg_.timeout_s) + 1;

  int out_pipe[2], err_pipe[2];
  if (pipe2(out_pipe, O_CLOEXEC) != 0 || pipe2(err_pipe, O_CLOEXEC) != 0)
    throw EnvironmentError(std::string("pipe: ") + std::strerror(errno));

  auto start = std::chrono::steady_clock::now();
  pid_t pid = fork();
  if (pid < 0) throw EnvironmentError(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    setpgid(0, 0);
    unshare(CLONE_NEWNET);  // unprivileged callers get EPERM; limits still apply
    rlimit r{mem, mem};
    setrlimit(RLIMIT_AS, &r);
    r = {cpu, cpu};
    setrlimit(RLIMIT_CPU, &r);
    r = {1 << 20, 1 << 20};
    setrlimit(RLIMIT_FSIZE, &r);
    r = {0, 0};
    setrlimit(RLIMIT_CORE, &r);
    int devnull = open("/dev/null", O_RDONLY);
    if (devnull >= 0) dup2(devnull, 0);
    dup2(out_pipe[1], 1);
    dup2(err_pipe[1], 2);
    if (chdir(cwd.c_str()) != 0) _exit(126);
    execve(argv[0], argv.data(), envp.data());
    _exit(127);
  }
  close(out_pipe[1]);
  close(err_pipe[1]);

  SandboxResult res;
  const auto deadline = start + std::chrono::duration<double>(cfg_.timeout_s);
  pollfd fds[2] = {{out_pipe[0], POLLIN, 0}, {err_pipe[0], POLLIN, 0}};
  std::string* sinks[2] = {&res.out, &res.err};
  int open_fds = 2;
  bool killed = false;
  char buf[4096];
  while (open_fds > 0) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      res.timed_out = true;
      break;
    }
    int rc = poll(fds, 2, static_cast<int>(left.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc < 0) break;
    for (int i = 0; i < 2; ++i) {
      if (fds[i].fd < 0 || !(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      ssize_t n = read(fds[i].fd, buf, sizeof buf);
      if (n <= 0) {
        close(fds[i].fd);
        fds[i].fd = -1;
        --open_fds;
      } else if (sinks[i]->size() < cfg_.max_output_bytes) {
        sinks[i]->append(buf, static_cast<std::size_t>(n));
      }
    }
  }
  if (res.timed_out || open_fds > 0) {
    kill(-pid, SIGKILL);
    kill(pid, SIGKILL);
    killed = true;
  }
  for (auto& f : fds)
    if (f.fd >= 0) close(f.fd);
  int status = 0;
  while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  res.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (WIFEXITED(status)) {
    res.exit_code = WEXITSTATUS(status);
    if (res.exit_code == 127 && !killed) res.err += "\n(interpreter could not be executed)";
  } else if (WIFSIGNALED(status)) {
    res.exit_code = 128 + WTERMSIG(status);
    // CPU-limit kills are timeouts too.
    if (WTERMSIG(status) == SIGXCPU || (WTERMSIG(status) == SIGKILL && !killed)) res.timed_out = true;
  }
  return res;
}

}  // namespace qarefine
