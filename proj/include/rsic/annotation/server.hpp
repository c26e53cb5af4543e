#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "rsic/annotation/store.hpp"

namespace httplib {
class Server;
}

namespace rsic::annotation {

struct ServerOptions {
    std::optional<std::filesystem::path> ui_dir;  // static assets mounted at /
    bool show_references = false;
};

// POST /sessions, GET /sessions/{id}/next?annotator=A, POST /sessions/{id}/labels,
// GET /sessions/{id}/report, GET /images/{item_id}[?session=id].
class AnnotationServer {
  public:
    AnnotationServer(SessionStore& store, ServerOptions opts = {});
    ~AnnotationServer();

    // Binds to an OS-chosen port and returns it.
    int bind_any_port(const std::string& host = "127.0.0.1");
    bool listen_after_bind();
    bool listen(const std::string& host, int port);
    void stop();
    void wait_until_ready() const;

  private:
    SessionStore& store_;
    ServerOptions opts_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace rsic::annotation
