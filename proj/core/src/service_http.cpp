#include <httplib.h>

#include <iostream>

#include "stamps/service.hpp"

namespace stamps {

struct HttpFrontend::Impl {
  httplib::Server server;
};

HttpFrontend::HttpFrontend(StampService& service) : impl_(std::make_unique<Impl>()) {
  auto& server = impl_->server;
  const auto& dir = service.config().static_dir;
  if (!dir.empty() && std::filesystem::is_directory(dir)) server.set_mount_point("/", dir.string());
  auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
    const auto out = service.handle(req.method, req.path, req.body);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  };
  server.Get(R"(/healthz|/v1/.*)", forward);
  server.Post(R"(/v1/.*)", forward);
}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpFrontend::listen() { impl_->server.listen_after_bind(); }

void HttpFrontend::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

void serve(StampService& service, const std::string& host, int port) {
  HttpFrontend frontend(service);
  const int bound = frontend.bind(host, port);
  std::cerr << "listening on " << host << ":" << bound << '\n';
  frontend.listen();
}

}  // namespace stamps
