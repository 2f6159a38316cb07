#include <cstring>

#include "fda/server.hpp"

// after Eigen: resolv.h defines a `res` macro
#include <httplib.h>

namespace fda::server {

namespace {

void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) { send(res, http_status(e.code()), error_json(e)); }

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    auto j = json::parse(req.body, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::ValidationError, "request body is not valid JSON", {{"", "malformed JSON"}});
    return j;
}

std::string key_of(const httplib::Request& req) { return req.get_header_value("Idempotency-Key"); }

std::string content_type(const std::string& path) {
    auto ends = [&](const char* ext) { return path.size() >= std::strlen(ext) && path.ends_with(ext); };
    if (ends(".json")) return "application/json";
    if (ends(".csv")) return "text/csv";
    return "application/octet-stream";
}

template <typename F>
httplib::Server::Handler guarded(F&& f) {
    return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const Error& e) {
            send_error(res, e);
        }
    };
}

}  // namespace

void install_routes(httplib::Server& http, Service& service, const std::string& static_dir) {
    const std::string api = "/api/v1";
    const std::string id = "([A-Za-z0-9_-]+)";

    http.Get(api + "/health", [](const httplib::Request&, httplib::Response& res) { send(res, 200, {{"status", "ok"}}); });

    http.Post(api + "/runs", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                  send(res, 202, service.create_run(parse_body(req), key_of(req)));
              }));
    http.Get(api + "/runs", guarded([&service](const httplib::Request&, httplib::Response& res) {
                 send(res, 200, service.list_runs());
             }));
    http.Get(api + "/runs/" + id, guarded([&service](const httplib::Request& req, httplib::Response& res) {
                 send(res, 200, service.run_status(req.matches[1]));
             }));
    http.Get(api + "/runs/" + id + "/archive", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                 std::optional<int> max_cells;
                 if (req.has_param("max_cells")) {
                     const auto text = req.get_param_value("max_cells");
                     try {
                         std::size_t used = 0;
                         max_cells = std::stoi(text, &used);
                         if (used != text.size()) throw std::invalid_argument(text);
                     } catch (const std::logic_error&) {
                         throw Error(ErrorCode::ValidationError, "max_cells must be an integer", {{"max_cells", "not an integer"}});
                     }
                 }
                 bool thumbnails = true;
                 if (req.has_param("thumbnails")) {
                     const auto t = req.get_param_value("thumbnails");
                     thumbnails = !(t == "0" || t == "false");
                 }
                 send(res, 200, service.archive(req.matches[1], max_cells, thumbnails));
             }));
    http.Post(api + "/runs/" + id + "/zoom", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                  send(res, 202, service.zoom(req.matches[1], parse_body(req), key_of(req)));
              }));
    http.Post(api + "/runs/" + id + "/walk", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                  send(res, 200, service.walk(req.matches[1], parse_body(req), key_of(req)));
              }));
    http.Post(api + "/runs/" + id + "/validate", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                  send(res, 200, service.validate_shape(req.matches[1], parse_body(req), key_of(req)));
              }));
    http.Get(api + "/runs/" + id + "/artifacts/(.+)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                 const std::string path = req.matches[2];
                 const auto bytes = service.store().read_artifact(req.matches[1], path);
                 res.status = 200;
                 res.set_content(bytes, content_type(path));
             }));

    http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const Error& e) {
            send_error(res, e);
        } catch (const std::exception& e) {
            send(res, 500, {{"code", "InternalError"}, {"message", e.what()}, {"fields", json::array()}});
        } catch (...) {
            send(res, 500, {{"code", "InternalError"}, {"message", "unknown error"}, {"fields", json::array()}});
        }
    });
    http.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (res.body.empty() && req.path.starts_with("/api/")) {
            const std::string message = res.status == 404 ? "no such endpoint" : "request failed";
            send(res, res.status, {{"code", res.status == 404 ? "NotFound" : "ValidationError"},
                                   {"message", message},
                                   {"fields", json::array()}});
        }
    });

    if (!static_dir.empty() && !http.set_mount_point("/", static_dir)) {
        throw Error(ErrorCode::NotFound, "static directory " + static_dir + " does not exist");
    }
}

}  // namespace fda::server
