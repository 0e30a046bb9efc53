#pragma once

// Adapter for out-of-process solvers speaking line-delimited JSON.
//
//   request : {"id": str, "problem": "tsp"|"cvrp", "coords": [[x,y],...],
//              "demands": [d,...], "capacity": q}        (last two CVRP only)
//   response: {"id": str, "tour": [i,...]}
//           | {"id": str, "routes": [[i,...],...]}
//           | {"id": str, "error": str}
//
// One request per line; replies come back in request order. Coordinates are
// the unit-square coordinates, demands are normalised and capacity is 1.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "routesel/errors.hpp"
#include "routesel/instance.hpp"

namespace routesel {

using Clock = std::chrono::steady_clock;

// A child process running `/bin/sh -c command` with piped stdin/stdout.
class ChildProcess {
 public:
  explicit ChildProcess(const std::string& command) {
    static const bool sigpipe_ignored = [] {
      ::signal(SIGPIPE, SIG_IGN);
      return true;
    }();
    (void)sigpipe_ignored;
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) throw SolverFailure(SolverFailure::Kind::kLaunch, "pipe failed");
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw SolverFailure(SolverFailure::Kind::kLaunch, "pipe failed");
    }
    pid_ = ::fork();
    if (pid_ < 0) {
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      throw SolverFailure(SolverFailure::Kind::kLaunch, "fork failed for: " + command);
    }
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      // Own process group so a timeout can kill the whole shell pipeline.
      ::setpgid(0, 0);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::setpgid(pid_, pid_);
    ::close(to_child[0]);
    ::close(from_child[1]);
    in_fd_ = to_child[1];
    out_fd_ = from_child[0];
  }

  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  ~ChildProcess() {
    close_stdin();
    if (out_fd_ >= 0) ::close(out_fd_);
    if (pid_ > 0 && !exited_) {
      kill();
    }
  }

  bool write_line(const std::string& line) {
    std::string buf = line + "\n";
    std::size_t off = 0;
    while (off < buf.size()) {
      const ssize_t w = ::write(in_fd_, buf.data() + off, buf.size() - off);
      if (w < 0) {
        if (errno == EINTR) continue;
        return false;
      }
      off += static_cast<std::size_t>(w);
    }
    return true;
  }

  void close_stdin() {
    if (in_fd_ >= 0) {
      ::close(in_fd_);
      in_fd_ = -1;
    }
  }

  // Reads one line; std::nullopt on EOF. Throws a timeout failure at deadline.
  std::optional<std::string> read_line(Clock::time_point deadline) {
    while (true) {
      const auto nl = pending_.find('\n');
      if (nl != std::string::npos) {
        std::string line = pending_.substr(0, nl);
        pending_.erase(0, nl + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
      if (left <= 0) throw SolverFailure(SolverFailure::Kind::kTimeout, "external solver timed out");
      pollfd pfd{out_fd_, POLLIN, 0};
      const int rc = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left, 1 << 30)));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw SolverFailure(SolverFailure::Kind::kMalformed, "poll failed on solver output");
      }
      if (rc == 0) continue;
      char buf[4096];
      const ssize_t r = ::read(out_fd_, buf, sizeof buf);
      if (r < 0) {
        if (errno == EINTR) continue;
        throw SolverFailure(SolverFailure::Kind::kMalformed, "read failed on solver output");
      }
      if (r == 0) {
        if (pending_.empty()) return std::nullopt;
        std::string line = std::move(pending_);
        pending_.clear();
        return line;
      }
      pending_.append(buf, static_cast<std::size_t>(r));
    }
  }

  // Waits for exit until the deadline; returns the exit status, or nullopt if
  // the child was still running and had to be killed.
  std::optional<int> wait(Clock::time_point deadline) {
    while (true) {
      int status = 0;
      const pid_t r = ::waitpid(pid_, &status, WNOHANG);
      if (r == pid_) {
        exited_ = true;
        if (WIFEXITED(status)) return WEXITSTATUS(status);
        return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
      }
      if (Clock::now() >= deadline) {
        kill();
        return std::nullopt;
      }
      ::usleep(2000);
    }
  }

  void kill() {
    if (pid_ <= 0 || exited_) return;
    ::kill(-pid_, SIGKILL);
    ::kill(pid_, SIGKILL);
    int status = 0;
    ::waitpid(pid_, &status, 0);
    exited_ = true;
  }

 private:
  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  bool exited_ = false;
  std::string pending_;
};

inline nlohmann::json make_solver_request(const RoutingInstance& inst) {
  nlohmann::json req;
  req["id"] = inst.id;
  req["problem"] = to_string(inst.kind);
  nlohmann::json coords = nlohmann::json::array();
  for (const auto& p : inst.coords) coords.push_back({p.x, p.y});
  req["coords"] = std::move(coords);
  if (inst.is_cvrp()) {
    req["demands"] = inst.demands;
    req["capacity"] = inst.capacity;
  }
  return req;
}

// Turns a response line into a validated solution (objective filled in).
inline Solution parse_solver_response(const RoutingInstance& inst, const std::string& line) {
  nlohmann::json resp;
  try {
    resp = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw SolverFailure(SolverFailure::Kind::kMalformed, std::string("malformed solver response: ") + e.what());
  }
  if (!resp.is_object() || !resp.contains("id") || !resp["id"].is_string()) {
    throw SolverFailure(SolverFailure::Kind::kMalformed, "solver response lacks a string id");
  }
  if (resp["id"].get<std::string>() != inst.id) {
    throw SolverFailure(SolverFailure::Kind::kMalformed, "solver response id '" + resp["id"].get<std::string>() +
                                                             "' does not match request '" + inst.id + "'");
  }
  if (resp.contains("error")) {
    throw SolverFailure(SolverFailure::Kind::kSolverError, "solver reported error: " + resp["error"].dump());
  }
  Solution sol;
  try {
    if (inst.kind == ProblemKind::kTsp) {
      if (!resp.contains("tour")) throw SolverFailure(SolverFailure::Kind::kMalformed, "TSP response lacks 'tour'");
      sol.tour = resp["tour"].get<std::vector<std::size_t>>();
    } else {
      if (!resp.contains("routes")) throw SolverFailure(SolverFailure::Kind::kMalformed, "CVRP response lacks 'routes'");
      sol.routes = resp["routes"].get<std::vector<std::vector<std::size_t>>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw SolverFailure(SolverFailure::Kind::kMalformed, std::string("malformed solution payload: ") + e.what());
  }
  try {
    sol.objective = tour_cost(inst, sol);
  } catch (const ValidationError& e) {
    throw SolverFailure(SolverFailure::Kind::kInvalidSolution, std::string("invalid solution: ") + e.what());
  }
  return sol;
}

inline Solution external_solve(const std::string& command, const RoutingInstance& inst, double timeout_s) {
  if (!(timeout_s > 0.0)) throw ParameterError("external solver timeout must be positive");
  const auto start = Clock::now();
  const auto deadline = start + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(timeout_s));
  ChildProcess child(command);
  if (!child.write_line(make_solver_request(inst).dump())) {
    child.wait(deadline);
    throw SolverFailure(SolverFailure::Kind::kExit, "external solver closed its input: " + command);
  }
  child.close_stdin();
  std::optional<std::string> line;
  try {
    line = child.read_line(deadline);
  } catch (const SolverFailure&) {
    child.kill();
    throw;
  }
  const auto status = child.wait(std::max(deadline, Clock::now() + std::chrono::milliseconds(200)));
  if (!line) {
    throw SolverFailure(SolverFailure::Kind::kExit, "external solver produced no response (exit status " +
                                                        (status ? std::to_string(*status) : std::string("killed")) + ")");
  }
  if (status && *status != 0) {
    throw SolverFailure(SolverFailure::Kind::kExit, "external solver exited with status " + std::to_string(*status));
  }
  Solution sol = parse_solver_response(inst, *line);
  sol.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
  return sol;
}

}  // namespace routesel
