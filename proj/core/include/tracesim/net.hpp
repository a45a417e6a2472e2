#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

namespace tracesim {

/// Owning POSIX socket handle.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { close(); }
  Socket(Socket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  static std::optional<Socket> connect(const std::string& host, int port,
                                       std::chrono::milliseconds timeout);

  bool send_all(const void* data, size_t len);
  bool recv_exact(void* data, size_t len);
  void set_recv_timeout(std::chrono::milliseconds timeout);
  void shutdown_both();
  void close();

  bool valid() const { return fd_ >= 0; }
  int fd() const { return fd_; }

 private:
  int fd_ = -1;
};

class TcpListener {
 public:
  TcpListener() = default;
  /// Binds and listens; port 0 picks an ephemeral port (see `port()`).
  /// Throws std::runtime_error if the address is unavailable.
  TcpListener(const std::string& host, int port);

  std::optional<Socket> accept();
  int port() const { return port_; }
  void close();
  bool valid() const { return fd_.valid(); }

 private:
  Socket fd_;
  int port_ = 0;
};

// Request frame: [u32 big-endian length][1-byte opcode][JSON body], where
// length = 1 + body size. Response frame: [u32 big-endian length][JSON body].
inline constexpr std::uint32_t kMaxFrameBytes = 16u << 20;

bool write_request_frame(Socket& s, std::uint8_t opcode, std::string_view body);
std::optional<std::pair<std::uint8_t, std::string>> read_request_frame(Socket& s);
bool write_response_frame(Socket& s, std::string_view body);
std::optional<std::string> read_response_frame(Socket& s);

/// Size on the wire of a request frame carrying `body`.
inline std::uint64_t request_frame_bytes(std::string_view body) { return 4 + 1 + body.size(); }

/// Blocking TCP server running one thread per connection. The handler maps
/// (opcode, request body) to a response body and must be thread-safe.
class FramedServer {
 public:
  using Handler = std::function<std::string(std::uint8_t opcode, const std::string& body)>;

  FramedServer(const std::string& host, int port, Handler handler);
  ~FramedServer();

  int port() const { return listener_.port(); }
  /// Hard stop: closes the listener and every live connection, joins threads.
  void stop();

 private:
  void accept_loop();
  void serve(std::shared_ptr<Socket> conn);

  TcpListener listener_;
  Handler handler_;
  std::thread accept_thread_;
  std::mutex mu_;
  bool stopping_ = false;
  std::vector<std::shared_ptr<Socket>> conns_;
  std::vector<std::thread> workers_;
};

}  // namespace tracesim
