#include "rsic/annotation/server.hpp"

#include <fstream>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace rsic::annotation {

using nlohmann::json;

namespace {

void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

std::string mime_for(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".tif" || ext == ".tiff") return "image/tiff";
    return "application/octet-stream";
}

// Runs a handler, mapping store errors onto status codes.
template <typename F>
auto guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const UnknownSession& e) {
            reply(res, 404, {{"error", e.what()}});
        } catch (const AnnotationError& e) {
            reply(res, 400, {{"error", e.what()}});
        } catch (const json::exception& e) {
            reply(res, 400, {{"error", std::string("bad JSON: ") + e.what()}});
        } catch (const std::exception& e) {
            spdlog::error("{} {}: {}", req.method, req.path, e.what());
            reply(res, 500, {{"error", e.what()}});
        }
    };
}

}  // namespace

AnnotationServer::AnnotationServer(SessionStore& store, ServerOptions opts)
    : store_(store), opts_(std::move(opts)), server_(std::make_unique<httplib::Server>()) {
    auto& s = *server_;

    s.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const json body = json::parse(req.body);
        const json& list = body.is_array() ? body : body.at("items");
        if (!list.is_array()) throw AnnotationError("items must be a list");
        std::vector<AnnotationItem> items;
        for (const auto& j : list) items.push_back(item_from_json(j));
        std::optional<std::uint64_t> seed;
        if (body.is_object() && body.contains("seed")) seed = body.at("seed").get<std::uint64_t>();
        const std::string id = store_.create_session(items, seed);
        reply(res, 201, {{"session_id", id}, {"seed", store_.seed(id)}, {"total", items.size()}});
    }));

    s.Get(R"(/sessions/([A-Za-z0-9-]+)/next)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const std::string annotator = req.get_param_value("annotator");
        if (annotator.empty()) throw AnnotationError("annotator query parameter is required");
        const NextItem n = store_.next_item(req.matches[1], annotator);
        json out{{"labeled", n.labeled}, {"total", n.total}};
        if (!n.item) {
            out["done"] = true;
        } else {
            out["done"] = false;
            json item = to_json(*n.item, opts_.show_references);
            item.erase("image_path");
            item["image_url"] = "/images/" + n.item->item_id + "?session=" + std::string(req.matches[1]);
            out["item"] = item;
        }
        reply(res, 200, out);
    }));

    s.Post(R"(/sessions/([A-Za-z0-9-]+)/labels)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const json body = json::parse(req.body);
        AnnotationLabel l;
        l.item_id = body.at("item_id").get<std::string>();
        l.label = parse_judgement(body.at("label").get<std::string>());
        l.annotator = body.at("annotator").get<std::string>();
        store_.submit_label(req.matches[1], l);
        const NextItem n = store_.next_item(req.matches[1], l.annotator);
        reply(res, 200, {{"ok", true}, {"labeled", n.labeled}, {"total", n.total}});
    }));

    s.Get(R"(/sessions/([A-Za-z0-9-]+)/report)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        reply(res, 200, to_json(store_.report(req.matches[1])));
    }));

    s.Get(R"(/images/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto path = store_.image_path(req.matches[1], req.get_param_value("session"));
        if (!path) return reply(res, 404, {{"error", "no image for item " + std::string(req.matches[1])}});
        std::ifstream in(*path, std::ios::binary);
        if (!in) return reply(res, 404, {{"error", "image file missing: " + path->string()}});
        std::string bytes{std::istreambuf_iterator<char>(in), {}};
        res.set_content(std::move(bytes), mime_for(*path));
    }));

    if (opts_.ui_dir && !s.set_mount_point("/", opts_.ui_dir->string()))
        spdlog::warn("UI directory {} not found; serving the API only", opts_.ui_dir->string());
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }
bool AnnotationServer::listen_after_bind() { return server_->listen_after_bind(); }
bool AnnotationServer::listen(const std::string& host, int port) { return server_->listen(host, port); }
void AnnotationServer::stop() {
    if (server_->is_running()) server_->stop();
}
void AnnotationServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace rsic::annotation
