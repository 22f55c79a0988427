#include <stdexcept>

#include "httplib.h"
#include "progsearch/error.hpp"
#include "progsearch/service.hpp"

namespace progsearch {

// --- tag model client ----------------------------------------------------------

HttpTagModel::HttpTagModel(std::string url, int timeout_seconds) : timeout_seconds_(timeout_seconds) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::kConfig, "model endpoint url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

std::optional<TagResponse> HttpTagModel::tag(const TagRequest& request, const TagKind& kind) {
  try {
    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(timeout_seconds_, 0);
    client.set_read_timeout(timeout_seconds_, 0);
    const auto separator = path_.find('?') == std::string::npos ? "?" : "&";
    auto res = client.Post(path_ + separator + "kind=" + kind.name(), encode_tag_request(request),
                           "application/json");
    if (!res || res->status != 200) return std::nullopt;
    return decode_tag_response(res->body);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// --- server ----------------------------------------------------------------------

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;

  explicit Impl(Service& s) : service(s) {
    auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
      QueryParams params(req.params.begin(), req.params.end());
      const auto out = service.handle(req.method, req.path, params, req.body);
      res.status = out.status;
      res.set_content(out.body, out.content_type.c_str());
    };
    server.Get(".*", dispatch);
    server.Post(".*", dispatch);
    server.Put(".*", dispatch);
    server.Delete(".*", dispatch);
    server.Options(".*", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    server.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string message = "unexpected failure";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        message = e.what();
      } catch (...) {
      }
      const auto out = problem(500, "internal_error", message);
      res.status = out.status;
      res.set_content(out.body, out.content_type.c_str());
    });
  }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}
HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorCode::kUnavailable, "cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace progsearch
