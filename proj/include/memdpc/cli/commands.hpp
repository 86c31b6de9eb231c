#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace memdpc::cli {

/// Exclusive advisory lock on `<run_dir>/.lock`, released on destruction or
/// process exit. Throws IoError when another process holds it.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

/// `run.root`/`run.name`, falling back to $MEMDPC_RUN_ROOT, ./runs and the command name.
std::filesystem::path run_directory(const nlohmann::json& cfg, const std::string& command);

/// Machine-readable failure line: {"error": kind, "exit_code": n, "message": ...}.
std::string error_line(const std::string& kind, int exit_code, const std::string& message);

/// Full command-line entry point; args excludes the program name.
/// Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace memdpc::cli
