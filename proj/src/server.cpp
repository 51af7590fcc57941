#include "mammogan/server.hpp"

#include <httplib.h>

#include <fstream>
#include <regex>
#include <sstream>

#include "mammogan/errors.hpp"

namespace mammogan {

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, json{{"error", message}});
}

json parse_body(const httplib::Request& req) {
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) throw ServiceError(400, "request body must be a JSON object");
    return j;
  } catch (const json::exception&) {
    throw ServiceError(400, "request body is not valid JSON");
  }
}

// Runs a handler, mapping service and data errors to HTTP statuses.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e.status(), e.what());
    } catch (const DataError& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

}  // namespace

ReadoutServer::ReadoutServer(ReadoutService& service, std::filesystem::path package_dir, std::string admin_token)
    : service_(service),
      package_dir_(std::move(package_dir)),
      admin_token_(std::move(admin_token)),
      server_(std::make_unique<httplib::Server>()) {
  auto& svr = *server_;

  svr.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const auto body = parse_body(req);
             if (!body.contains("reader_id") || !body["reader_id"].is_string())
               throw ServiceError(400, "reader_id (string) is required");
             if (body.contains("readout_id") && body["readout_id"] != service_.readout().readout_id)
               throw ServiceError(404, "unknown readout");
             const auto id = service_.create_session(body["reader_id"].get<std::string>());
             send_json(res, 201, service_.session_payload(id));
           }));

  svr.Get("/sessions/:id/next", guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, service_.next_item(req.path_params.at("id")));
          }));

  svr.Post("/sessions/:id/ratings", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const auto body = parse_body(req);
             if (!body.contains("item_id") || !body["item_id"].is_string())
               throw ServiceError(400, "item_id (string) is required");
             for (const char* k : {"malignancy", "manipulation"})
               if (!body.contains(k) || !body[k].is_number_integer())
                 throw ServiceError(422, std::string(k) + " must be an integer");
             RatingSubmission r{body["item_id"], body["malignancy"], body["manipulation"]};
             send_json(res, 200, service_.submit_rating(req.path_params.at("id"), r));
           }));

  svr.Get("/readouts/:id/export", guarded([this](const httplib::Request& req, httplib::Response& res) {
            if (admin_token_.empty()) throw ServiceError(403, "export disabled: no admin token configured");
            if (req.get_header_value("Authorization") != "Bearer " + admin_token_)
              throw ServiceError(401, "admin token required");
            if (req.path_params.at("id") != service_.readout().readout_id) throw ServiceError(404, "unknown readout");
            std::vector<std::string> warnings;
            const auto rows = service_.export_ratings(&warnings);
            std::ostringstream out;
            const bool csv = req.get_param_value("format") == "csv";
            if (csv) out << scoring_csv_header() << '\n';
            for (const auto& r : rows) out << (csv ? to_csv(r) : to_json(r).dump()) << '\n';
            res.set_header("X-Export-Warnings", std::to_string(warnings.size()));
            res.set_content(out.str(), csv ? "text/csv" : "application/x-ndjson");
          }));

  svr.Get("/images/:file", guarded([this](const httplib::Request& req, httplib::Response& res) {
            static const std::regex name("(i[0-9]{3})\\.png");
            std::smatch m;
            const std::string file = req.path_params.at("file");
            if (!std::regex_match(file, m, name)) throw ServiceError(404, "no such image");
            try {
              service_.readout().item(m[1].str());
            } catch (const DataError&) {
              throw ServiceError(404, "no such image");
            }
            std::ifstream in(package_dir_ / "images" / file, std::ios::binary);
            if (!in) throw ServiceError(404, "no such image");
            std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            res.set_content(bytes, "image/png");
          }));
}

ReadoutServer::~ReadoutServer() = default;

int ReadoutServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = server_->bind_to_any_port(host);
    if (p < 0) throw DataError("cannot bind " + host);
    return p;
  }
  if (!server_->bind_to_port(host, port)) throw DataError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void ReadoutServer::run() { server_->listen_after_bind(); }

void ReadoutServer::stop() { server_->stop(); }

}  // namespace mammogan
