#pragma once

// Client side of the external evaluation protocol: line-delimited JSON over a
// worker's stdin/stdout.
//
//   engine -> worker  {"type":"hello","version":1,"schema":[...],"model_manifest":{...}}
//   worker -> engine  {"type":"ready"}
//   engine -> worker  {"type":"eval","id":N,"genome":[...],"plan":[...]}
//   worker -> engine  {"type":"result","id":N,"accuracy":A}
//   engine -> worker  {"type":"bye"}
//
// A pool of P worker processes each carries at most one request in flight.
// A worker that exits or times out scores the individual 0 and is restarted;
// a malformed or mismatched response aborts the run with ProtocolError.

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <csignal>
#include <cstring>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "gencomp/error.hpp"
#include "gencomp/evaluator.hpp"
#include "gencomp/genome.hpp"
#include "gencomp/model.hpp"

extern char** environ;

namespace gencomp {

inline constexpr int kProtocolVersion = 1;

inline json hello_message(const GenomeSchema& schema, const ModelSpec& model) {
    return {{"type", "hello"},
            {"version", kProtocolVersion},
            {"schema", to_json(schema)},
            {"model_manifest", manifest_from_model(model)}};
}

inline json eval_message(std::uint64_t id, const Genome& genome, const GenomeSchema& schema,
                         const CompressionPlan& plan) {
    return {{"type", "eval"}, {"id", id}, {"genome", to_json(genome, schema)}, {"plan", to_json(plan)}};
}

/// Validates a worker's response line against the request id.
inline double parse_result(const std::string& line, std::uint64_t expected_id) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception&) {
        throw ProtocolError("malformed worker response: " + line);
    }
    if (!j.is_object() || j.value("type", "") != "result") {
        throw ProtocolError("expected a result message, got: " + line);
    }
    if (!j.contains("id") || !j["id"].is_number_unsigned()) throw ProtocolError("result without id: " + line);
    if (j["id"].get<std::uint64_t>() != expected_id) {
        throw ProtocolError("response id " + std::to_string(j["id"].get<std::uint64_t>()) +
                            " does not match request id " + std::to_string(expected_id));
    }
    if (!j.contains("accuracy") || !j["accuracy"].is_number()) throw ProtocolError("result without accuracy: " + line);
    const double acc = j["accuracy"].get<double>();
    if (!(acc >= 0.0 && acc <= 1.0)) throw ProtocolError("accuracy outside [0,1]: " + line);
    return acc;
}

/// One child process with piped stdin/stdout.
class WorkerProcess {
public:
    enum class ReadStatus { line, timeout, closed };

    explicit WorkerProcess(const std::vector<std::string>& argv) {
        if (argv.empty()) throw ValidationError("external evaluator command is empty");
        int in_pipe[2], out_pipe[2];
        if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw Error("pipe failed");
        if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
            ::close(in_pipe[0]);
            ::close(in_pipe[1]);
            throw Error("pipe failed");
        }
        posix_spawn_file_actions_t fa;
        posix_spawn_file_actions_init(&fa);
        posix_spawn_file_actions_adddup2(&fa, in_pipe[0], STDIN_FILENO);
        posix_spawn_file_actions_adddup2(&fa, out_pipe[1], STDOUT_FILENO);

        std::vector<char*> args;
        for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);
        const int rc = ::posix_spawnp(&pid_, args[0], &fa, nullptr, args.data(), environ);
        posix_spawn_file_actions_destroy(&fa);
        ::close(in_pipe[0]);
        ::close(out_pipe[1]);
        to_child_ = in_pipe[1];
        from_child_ = out_pipe[0];
        if (rc != 0) {
            close_fds();
            pid_ = -1;
            throw Error("cannot launch evaluator '" + argv[0] + "': " + std::strerror(rc));
        }
    }

    WorkerProcess(const WorkerProcess&) = delete;
    WorkerProcess& operator=(const WorkerProcess&) = delete;

    ~WorkerProcess() { terminate(); }

    /// False when the worker's stdin is gone.
    bool send_line(const std::string& line) {
        std::string buf = line + "\n";
        const char* p = buf.data();
        std::size_t left = buf.size();
        while (left > 0) {
            const ssize_t n = ::write(to_child_, p, left);
            if (n < 0) {
                if (errno == EINTR) continue;
                return false;
            }
            p += n;
            left -= static_cast<std::size_t>(n);
        }
        return true;
    }

    ReadStatus read_line(std::string& line, std::chrono::milliseconds timeout) {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
                line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return ReadStatus::line;
            }
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) return ReadStatus::timeout;
            pollfd pfd{from_child_, POLLIN, 0};
            const int pr = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
            if (pr < 0) {
                if (errno == EINTR) continue;
                return ReadStatus::closed;
            }
            if (pr == 0) return ReadStatus::timeout;
            char chunk[4096];
            const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) return ReadStatus::closed;
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    /// Sends `bye` and reaps the child, killing it if it lingers.
    void shutdown(std::chrono::milliseconds grace = std::chrono::milliseconds(2000)) {
        if (pid_ <= 0) return;
        send_line(json{{"type", "bye"}}.dump());
        ::close(to_child_);
        to_child_ = -1;
        const auto deadline = std::chrono::steady_clock::now() + grace;
        while (std::chrono::steady_clock::now() < deadline) {
            int status = 0;
            if (::waitpid(pid_, &status, WNOHANG) == pid_) {
                pid_ = -1;
                close_fds();
                return;
            }
            ::usleep(2000);
        }
        terminate();
    }

    void terminate() {
        if (pid_ > 0) {
            ::kill(pid_, SIGKILL);
            int status = 0;
            ::waitpid(pid_, &status, 0);
            pid_ = -1;
        }
        close_fds();
    }

private:
    void close_fds() {
        if (to_child_ >= 0) ::close(to_child_);
        if (from_child_ >= 0) ::close(from_child_);
        to_child_ = from_child_ = -1;
    }

    pid_t pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
};

struct ExternalOptions {
    std::vector<std::string> command;
    std::size_t workers = 1;
    std::chrono::milliseconds timeout{300'000};
};

class ExternalEvaluator final : public Evaluator {
public:
    ExternalEvaluator(ExternalOptions opt, const GenomeSchema& schema, const ModelSpec& model)
        : opt_(std::move(opt)), schema_(schema), hello_(hello_message(schema, model).dump()) {
        if (opt_.workers == 0) throw ValidationError("external evaluator needs at least one worker");
        std::signal(SIGPIPE, SIG_IGN);
        slots_.resize(opt_.workers);
        for (auto& s : slots_) s = launch();
        for (std::size_t i = 0; i < slots_.size(); ++i) free_.push_back(i);
    }

    ~ExternalEvaluator() override {
        for (auto& s : slots_) {
            if (s) s->shutdown();
        }
    }

    double accuracy(const Genome& genome, const CompressionPlan& plan) override {
        const std::size_t slot = acquire();
        struct Release {
            ExternalEvaluator* self;
            std::size_t slot;
            ~Release() { self->release(slot); }
        } release{this, slot};

        auto& worker = slots_[slot];
        if (!worker) worker = launch();
        const std::uint64_t id = next_id_.fetch_add(1);
        const std::string request = eval_message(id, genome, schema_, plan).dump();

        std::string line;
        auto status = WorkerProcess::ReadStatus::closed;
        if (worker->send_line(request)) status = worker->read_line(line, opt_.timeout);
        if (status == WorkerProcess::ReadStatus::line) return parse_result(line, id);

        ++failures_;
        std::cerr << "[gencomp] warning: evaluation worker "
                  << (status == WorkerProcess::ReadStatus::timeout ? "timed out" : "exited")
                  << " on request " << id << "; scoring the individual with accuracy 0\n";
        worker->terminate();
        worker.reset();
        return 0.0;
    }

    std::string name() const override { return "external"; }

    /// Requests that ended in a worker exit or timeout.
    std::size_t failures() const { return failures_.load(); }

private:
    std::unique_ptr<WorkerProcess> launch() {
        auto w = std::make_unique<WorkerProcess>(opt_.command);
        std::string line;
        if (!w->send_line(hello_)) throw Error("evaluation worker closed its input during handshake");
        const auto st = w->read_line(line, opt_.timeout);
        if (st != WorkerProcess::ReadStatus::line) {
            throw Error(std::string("evaluation worker ") +
                        (st == WorkerProcess::ReadStatus::timeout ? "timed out" : "exited") +
                        " during handshake");
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception&) {
            throw ProtocolError("malformed handshake reply: " + line);
        }
        if (!j.is_object() || j.value("type", "") != "ready") throw ProtocolError("expected ready, got: " + line);
        return w;
    }

    std::size_t acquire() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !free_.empty(); });
        const std::size_t s = free_.back();
        free_.pop_back();
        return s;
    }

    void release(std::size_t slot) {
        {
            std::lock_guard lock(mu_);
            free_.push_back(slot);
        }
        cv_.notify_one();
    }

    ExternalOptions opt_;
    GenomeSchema schema_;
    std::string hello_;
    std::vector<std::unique_ptr<WorkerProcess>> slots_;
    std::vector<std::size_t> free_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::atomic<std::uint64_t> next_id_{1};
    std::atomic<std::size_t> failures_{0};
};

}  // namespace gencomp
