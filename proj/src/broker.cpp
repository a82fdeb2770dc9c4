#include "llmbroker/broker.hpp"

#include "llmbroker/errors.hpp"

#include <cerrno>
#include <cstring>
#include <unordered_map>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace llmbroker {

namespace {

using json = nlohmann::json;

json error_frame(const std::string & id, std::string_view code, std::string_view message) {
    return json{{"id", id}, {"type", "error"}, {"code", code}, {"message", message}};
}

} // namespace

enum class session_state { pending, running, done };

struct session_record {
    session_state state = session_state::pending;
    bool cancel_requested = false;
    std::string engine_id;
};

struct broker::connection {
    std::uint64_t id = 0;
    int fd = -1;
    std::atomic<bool> alive{true};

    std::mutex write_mutex;
    std::condition_variable write_cv;
    std::deque<std::string> outbound;
    bool writer_done = false;

    std::mutex sessions_mutex;
    std::unordered_map<std::string, session_record> sessions;

    std::thread reader;
    std::thread writer;

    std::size_t queue_limit = 1024;

    // enqueues one frame; on overflow the connection is shut down after a
    // final error frame so a slow reader only stalls itself
    void send(const json & frame) {
        std::unique_lock lock(write_mutex);
        if (!alive.load()) {
            return;
        }
        if (outbound.size() >= queue_limit) {
            outbound.clear();
            outbound.push_back(
                error_frame("unknown", "overloaded", "outbound queue overflow, closing").dump() + "\n");
            alive.store(false);
            lock.unlock();
            write_cv.notify_all();
            return;
        }
        outbound.push_back(frame.dump() + "\n");
        lock.unlock();
        write_cv.notify_all();
    }

    void close_fd() {
        if (fd >= 0) {
            ::shutdown(fd, SHUT_RDWR);
        }
    }
};

struct broker::queued_goal {
    std::weak_ptr<connection> conn;
    std::string client_id;
    generation_goal goal;
};

broker::broker(broker_config cfg) : cfg_(std::move(cfg)) {
    std::optional<merge_table> merges;
    if (cfg_.merges_path) {
        merges = merge_table::load(*cfg_.merges_path);
    }
    engine_ = std::make_unique<engine>(std::move(merges));

    if (cfg_.backend_spec == "hash") {
        backend_ = std::make_unique<hash_backend>(engine_->vocab());
    } else if (cfg_.backend_spec.rfind("scripted:", 0) == 0) {
        const std::filesystem::path path = cfg_.backend_spec.substr(9);
        backend_ = std::make_unique<scripted_backend>(scripted_lm::load(path, engine_->merges()),
                                                      engine_->vocab());
        backend_serialized_ = true;
        cfg_.max_sessions = 1; // a playback cursor cannot be shared across sessions
    } else {
        throw error(errc::bad_config, "unknown backend spec '" + cfg_.backend_spec + "'");
    }
    if (cfg_.max_sessions == 0) {
        cfg_.max_sessions = 1;
    }
}

broker::~broker() {
    stop();
}

void broker::start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) {
        throw error(errc::bind_failure, "socket: " + std::string(std::strerror(errno)));
    }
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(cfg_.port);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr *>(&addr), sizeof(addr)) != 0) {
        const std::string msg = std::strerror(errno);
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw error(errc::bind_failure,
                    "cannot bind port " + std::to_string(cfg_.port) + ": " + msg);
    }
    if (::listen(listen_fd_, 64) != 0) {
        const std::string msg = std::strerror(errno);
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw error(errc::bind_failure, "listen: " + msg);
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr *>(&addr), &len);
    bound_port_ = ntohs(addr.sin_port);

    for (std::size_t i = 0; i < cfg_.max_sessions; ++i) {
        workers_.emplace_back([this] { worker_loop(); });
    }
    accept_thread_ = std::thread([this] { accept_loop(); });
}

void broker::stop() {
    if (stopping_.exchange(true)) {
        return;
    }
    if (listen_fd_ >= 0) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
    if (accept_thread_.joinable()) {
        accept_thread_.join();
    }

    std::vector<std::shared_ptr<connection>> conns;
    {
        std::lock_guard lock(conns_mutex_);
        conns = conns_;
    }
    for (auto & conn : conns) {
        drop_connection(conn);
        conn->close_fd();
    }
    queue_cv_.notify_all();
    for (auto & w : workers_) {
        if (w.joinable()) {
            w.join();
        }
    }
    for (auto & conn : conns) {
        if (conn->reader.joinable()) {
            conn->reader.join();
        }
        {
            std::lock_guard lock(conn->write_mutex);
            conn->alive.store(false);
        }
        conn->write_cv.notify_all();
        if (conn->writer.joinable()) {
            conn->writer.join();
        }
        if (conn->fd >= 0) {
            ::close(conn->fd);
            conn->fd = -1;
        }
    }
    {
        std::lock_guard lock(conns_mutex_);
        conns_.clear();
    }
    stop_cv_.notify_all();
}

void broker::wait() {
    std::unique_lock lock(stop_mutex_);
    stop_cv_.wait(lock, [this] { return stopping_.load(); });
}

void broker::accept_loop() {
    while (!stopping_.load()) {
        sockaddr_in peer{};
        socklen_t len = sizeof(peer);
        const int fd = ::accept(listen_fd_, reinterpret_cast<sockaddr *>(&peer), &len);
        if (fd < 0) {
            if (stopping_.load()) {
                break;
            }
            if (errno == EINTR) {
                continue;
            }
            break;
        }
        const int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        timeval send_timeout{5, 0};
        ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &send_timeout, sizeof(send_timeout));

        auto conn = std::make_shared<connection>();
        conn->id = next_conn_id_.fetch_add(1);
        conn->fd = fd;
        conn->queue_limit = cfg_.outbound_queue_limit;
        {
            std::lock_guard lock(conns_mutex_);
            conns_.push_back(conn);
        }
        conn->writer = std::thread([this, conn] { writer_loop(conn); });
        conn->reader = std::thread([this, conn] { reader_loop(conn); });
    }
}

void broker::writer_loop(std::shared_ptr<connection> conn) {
    for (;;) {
        std::string frame;
        {
            std::unique_lock lock(conn->write_mutex);
            conn->write_cv.wait(lock, [&] { return !conn->outbound.empty() || !conn->alive.load(); });
            if (conn->outbound.empty()) {
                break; // dead and drained
            }
            frame = std::move(conn->outbound.front());
            conn->outbound.pop_front();
        }
        const char * data = frame.data();
        std::size_t remaining = frame.size();
        bool failed = false;
        while (remaining > 0) {
            const ssize_t n = ::send(conn->fd, data, remaining, MSG_NOSIGNAL);
            if (n <= 0) {
                if (n < 0 && errno == EINTR) {
                    continue;
                }
                failed = true;
                break;
            }
            data += n;
            remaining -= static_cast<std::size_t>(n);
        }
        if (failed) {
            conn->alive.store(false);
            break;
        }
    }
    conn->close_fd();
}

void broker::reader_loop(std::shared_ptr<connection> conn) {
    std::string buffer;
    char chunk[16384];
    bool oversized = false;

    while (conn->alive.load() && !stopping_.load()) {
        const ssize_t n = ::recv(conn->fd, chunk, sizeof(chunk), 0);
        if (n <= 0) {
            if (n < 0 && errno == EINTR) {
                continue;
            }
            break;
        }
        buffer.append(chunk, static_cast<std::size_t>(n));

        std::size_t nl;
        while ((nl = buffer.find('\n')) != std::string::npos) {
            std::string line = buffer.substr(0, nl);
            buffer.erase(0, nl + 1);
            if (line.empty()) {
                continue;
            }
            json frame = json::parse(line, nullptr, false);
            if (frame.is_discarded() || !frame.is_object()) {
                conn->send(error_frame("unknown", "bad_request", "frame is not a JSON object"));
                continue;
            }
            handle_frame(conn, frame);
        }
        if (buffer.size() > cfg_.max_frame_bytes) {
            conn->send(error_frame("unknown", "frame_too_large",
                                   "frame exceeds " + std::to_string(cfg_.max_frame_bytes) + " bytes"));
            oversized = true;
            break;
        }
    }

    drop_connection(conn);
    // let the writer drain what is queued (including a final error frame)
    {
        std::lock_guard lock(conn->write_mutex);
        conn->alive.store(false);
    }
    conn->write_cv.notify_all();
    if (oversized) {
        // the peer may still be streaming; cut it off
        conn->close_fd();
    }
}

void broker::drop_connection(const std::shared_ptr<connection> & conn) {
    // auto-cancel everything this client had in flight
    std::lock_guard lock(conn->sessions_mutex);
    for (auto & [client_id, rec] : conn->sessions) {
        if (rec.state == session_state::pending) {
            rec.cancel_requested = true;
            rec.state = session_state::done;
        } else if (rec.state == session_state::running) {
            try {
                engine_->cancel(rec.engine_id);
            } catch (const error &) {
                // finished in the meantime
            }
        }
    }
}

void broker::handle_frame(const std::shared_ptr<connection> & conn, const json & frame) {
    std::string id = "unknown";
    if (frame.contains("id") && frame["id"].is_string()) {
        id = frame["id"].get<std::string>();
    } else {
        conn->send(error_frame(id, "bad_request", "missing string 'id'"));
        return;
    }
    if (!frame.contains("type") || !frame["type"].is_string()) {
        conn->send(error_frame(id, "bad_request", "missing string 'type'"));
        return;
    }
    const std::string type = frame["type"].get<std::string>();

    try {
        if (type == "tokenize") {
            const auto text = frame.at("text").get<std::string>();
            const token_sequence tokens = tokenize(text, engine_->merges());
            conn->send(json{{"id", id}, {"type", "response"}, {"tokens", tokens}});
        } else if (type == "detokenize") {
            const auto tokens = frame.at("tokens").get<token_sequence>();
            const decode_result decoded = detokenize(tokens, engine_->merges());
            conn->send(json{{"id", id}, {"type", "response"}, {"text", decoded.text}});
        } else if (type == "embed") {
            const auto text = frame.at("text").get<std::string>();
            const token_sequence tokens = tokenize(text, engine_->merges());
            const embedding emb = hash_embed(64).embed(tokens); // throws empty_input on ""
            conn->send(json{{"id", id}, {"type", "response"}, {"embedding", emb}, {"dim", emb.size()}});
        } else if (type == "generate") {
            handle_generate(conn, frame, id);
        } else if (type == "cancel") {
            handle_cancel(conn, frame, id);
        } else {
            conn->send(error_frame(id, "unsupported_type", "unknown frame type '" + type + "'"));
        }
    } catch (const error & e) {
        conn->send(error_frame(id, errc_name(e.code()), e.what()));
    } catch (const json::exception & e) {
        conn->send(error_frame(id, "bad_request", e.what()));
    } catch (const std::exception & e) {
        conn->send(error_frame(id, "bad_request", e.what()));
    }
}

void broker::handle_generate(const std::shared_ptr<connection> & conn, const json & frame,
                             const std::string & id) {
    generation_goal goal;
    goal.session_id = "c" + std::to_string(conn->id) + "/" + id;
    goal.prompt = frame.value("prompt", std::string{});
    if (frame.contains("params")) {
        const json & p = frame["params"];
        goal.params.seed = p.value("seed", std::uint64_t{0});
        goal.params.temperature = p.value("temperature", 0.0);
        goal.params.top_k = p.value("top_k", 0);
        goal.params.top_p = p.value("top_p", 1.0);
        goal.params.max_tokens = p.value("max_tokens", 256);
        if (p.contains("stop")) {
            goal.params.stop = p["stop"].get<std::vector<std::string>>();
        }
        if (goal.params.temperature < 0.0 || goal.params.top_p <= 0.0 || goal.params.top_p > 1.0 ||
            goal.params.top_k < 0 || goal.params.max_tokens < 0) {
            throw error(errc::bad_request, "sampling parameters out of range");
        }
    }
    if (frame.contains("grammar") && !frame["grammar"].is_null()) {
        goal.grammar_source = frame["grammar"].get<std::string>();
        grammar::parse(*goal.grammar_source); // surface grammar errors before queueing
    }
    tokenize(goal.prompt, engine_->merges()); // surface invalid_text before queueing

    {
        std::lock_guard lock(conn->sessions_mutex);
        auto [it, inserted] = conn->sessions.try_emplace(id);
        if (!inserted && it->second.state != session_state::done) {
            throw error(errc::bad_request, "id '" + id + "' already names a live session");
        }
        it->second = session_record{session_state::pending, false, goal.session_id};
    }
    {
        std::lock_guard lock(queue_mutex_);
        queue_.push_back({conn, id, std::move(goal)});
    }
    queue_cv_.notify_one();
}

void broker::handle_cancel(const std::shared_ptr<connection> & conn, const json & frame,
                           const std::string & id) {
    const std::string target = frame.value("target_id", std::string{});
    std::lock_guard lock(conn->sessions_mutex);
    auto it = conn->sessions.find(target);
    if (it == conn->sessions.end()) {
        throw error(errc::unknown_session, "no session with id '" + target + "'");
    }
    session_record & rec = it->second;
    if (rec.state == session_state::pending) {
        rec.cancel_requested = true;
        rec.state = session_state::done;
        conn->send(json{{"id", target},
                        {"type", "result"},
                        {"status", "canceled"},
                        {"finish_reason", "canceled"},
                        {"text", ""}});
    } else if (rec.state == session_state::running) {
        // set the flag first: if the engine has not registered the session
        // yet, the worker re-checks this flag on the next chunk boundary
        rec.cancel_requested = true;
        try {
            engine_->cancel(rec.engine_id);
        } catch (const error &) {
            // lost the race with completion or registration
        }
    }
    conn->send(json{{"id", id}, {"type", "response"}, {"status", "ok"}});
}

void broker::worker_loop() {
    for (;;) {
        queued_goal item;
        {
            std::unique_lock lock(queue_mutex_);
            queue_cv_.wait(lock, [this] { return stopping_.load() || !queue_.empty(); });
            if (stopping_.load() && queue_.empty()) {
                return;
            }
            item = std::move(queue_.front());
            queue_.pop_front();
        }
        run_goal(item);
    }
}

void broker::run_goal(const queued_goal & item) {
    auto conn = item.conn.lock();
    if (!conn) {
        return;
    }
    {
        std::lock_guard lock(conn->sessions_mutex);
        auto it = conn->sessions.find(item.client_id);
        if (it == conn->sessions.end() || it->second.cancel_requested ||
            it->second.state == session_state::done) {
            return; // canceled while queued; its result frame already went out
        }
        it->second.state = session_state::running;
    }
    if (!conn->alive.load()) {
        return;
    }

    const std::string & id = item.client_id;
    generation_result result;
    try {
        // playback backends carry a consumption cursor and need exclusivity;
        // the hash backend is pure and can serve sessions concurrently
        std::unique_lock backend_lock(backend_mutex_, std::defer_lock);
        if (backend_serialized_) {
            backend_lock.lock();
        }
        result = engine_->generate(item.goal, *backend_, [&](const feedback_chunk & chunk) {
            conn->send(json{{"id", id},
                            {"type", "feedback"},
                            {"index", chunk.index},
                            {"token_id", chunk.token},
                            {"text", chunk.text}});
            bool want_cancel = false;
            {
                std::lock_guard lock(conn->sessions_mutex);
                auto it = conn->sessions.find(id);
                want_cancel = it != conn->sessions.end() && it->second.cancel_requested;
            }
            if (want_cancel) {
                try {
                    engine_->cancel(item.goal.session_id);
                } catch (const error &) {
                }
            }
        });
    } catch (const error & e) {
        conn->send(error_frame(id, errc_name(e.code()), e.what()));
        std::lock_guard lock(conn->sessions_mutex);
        conn->sessions[id].state = session_state::done;
        return;
    }

    json out{{"id", id},
             {"type", "result"},
             {"status", to_string(result.status)},
             {"finish_reason", to_string(result.reason)},
             {"text", result.text}};
    if (result.status == gen_status::failed) {
        out["message"] = result.error_message;
    }
    conn->send(out);
    std::lock_guard lock(conn->sessions_mutex);
    conn->sessions[id].state = session_state::done;
}

// ---------------------------------------------------------------------------
// wire client
// ---------------------------------------------------------------------------

wire_client::wire_client(const std::string & host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo * res = nullptr;
    const std::string service = std::to_string(port);
    if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0 || !res) {
        throw error(errc::io_error, "cannot resolve " + host);
    }
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd_ < 0 || ::connect(fd_, res->ai_addr, res->ai_addrlen) != 0) {
        ::freeaddrinfo(res);
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
        throw error(errc::io_error, "cannot connect to " + host + ":" + service);
    }
    ::freeaddrinfo(res);
    const int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

wire_client::~wire_client() {
    if (fd_ >= 0) {
        ::close(fd_);
    }
}

void wire_client::send(const nlohmann::json & frame) {
    const std::string line = frame.dump() + "\n";
    const char * data = line.data();
    std::size_t remaining = line.size();
    while (remaining > 0) {
        const ssize_t n = ::send(fd_, data, remaining, MSG_NOSIGNAL);
        if (n <= 0) {
            throw error(errc::io_error, "send failed");
        }
        data += n;
        remaining -= static_cast<std::size_t>(n);
    }
}

std::optional<nlohmann::json> wire_client::recv(int timeout_ms) {
    for (;;) {
        const std::size_t nl = buffer_.find('\n');
        if (nl != std::string::npos) {
            const std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return nlohmann::json::parse(line);
        }
        pollfd pfd{fd_, POLLIN, 0};
        const int rc = ::poll(&pfd, 1, timeout_ms);
        if (rc == 0) {
            throw error(errc::io_error, "timed out waiting for a frame");
        }
        if (rc < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw error(errc::io_error, "poll failed");
        }
        char chunk[16384];
        const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
        if (n == 0) {
            return std::nullopt;
        }
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw error(errc::io_error, "recv failed");
        }
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

void wire_client::shutdown_send() {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_WR);
    }
}

} // namespace llmbroker
