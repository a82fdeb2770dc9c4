#pragma once

#include "llmbroker/backends.hpp"
#include "llmbroker/engine.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace llmbroker {

struct broker_config {
    std::uint16_t port = 8350; // 0 binds an ephemeral port
    std::string backend_spec = "hash"; // "hash" | "scripted:PATH"
    std::optional<std::filesystem::path> merges_path;
    std::size_t max_sessions = 1; // concurrent generation workers
    std::size_t max_frame_bytes = 16ull << 20;
    std::size_t outbound_queue_limit = 1024;
};

// the service of the three wire interfaces: generation as an action
// (goal / streamed feedback / result / cancel), tokenize, detokenize and
// embeddings as request/response calls. frames are newline-delimited JSON
// objects over TCP, multiplexed per connection by a client-chosen id.
class broker {
public:
    explicit broker(broker_config cfg);
    ~broker();

    broker(const broker &) = delete;
    broker & operator=(const broker &) = delete;

    void start(); // binds and spawns the accept loop; throws bind_failure
    void stop();  // closes the listener and drains all connections
    void wait();  // blocks until stop() is called

    std::uint16_t port() const { return bound_port_; }
    engine & get_engine() { return *engine_; }

private:
    struct connection;
    struct queued_goal;

    void accept_loop();
    void reader_loop(std::shared_ptr<connection> conn);
    void writer_loop(std::shared_ptr<connection> conn);
    void worker_loop();

    void handle_frame(const std::shared_ptr<connection> & conn, const nlohmann::json & frame);
    void handle_generate(const std::shared_ptr<connection> & conn, const nlohmann::json & frame,
                         const std::string & id);
    void handle_cancel(const std::shared_ptr<connection> & conn, const nlohmann::json & frame,
                       const std::string & id);
    void run_goal(const queued_goal & item);
    void drop_connection(const std::shared_ptr<connection> & conn);

    broker_config cfg_;
    std::unique_ptr<engine> engine_;
    std::unique_ptr<gen_backend> backend_;
    bool backend_serialized_ = false; // playback cursors need exclusive access
    std::mutex backend_mutex_;

    int listen_fd_ = -1;
    std::uint16_t bound_port_ = 0;
    std::atomic<bool> stopping_{false};
    std::atomic<std::uint64_t> next_conn_id_{0};

    std::thread accept_thread_;
    std::vector<std::thread> workers_;

    std::mutex queue_mutex_;
    std::condition_variable queue_cv_;
    std::deque<queued_goal> queue_;

    std::mutex conns_mutex_;
    std::vector<std::shared_ptr<connection>> conns_;

    std::mutex stop_mutex_;
    std::condition_variable stop_cv_;
};

// blocking NDJSON client used by the CLI's --connect mode and by tests
class wire_client {
public:
    wire_client(const std::string & host, std::uint16_t port);
    ~wire_client();

    wire_client(const wire_client &) = delete;
    wire_client & operator=(const wire_client &) = delete;

    void send(const nlohmann::json & frame);
    // next frame, or nullopt on EOF; throws io_error on timeout
    std::optional<nlohmann::json> recv(int timeout_ms = 10000);
    void shutdown_send();

private:
    int fd_ = -1;
    std::string buffer_;
};

} // namespace llmbroker
