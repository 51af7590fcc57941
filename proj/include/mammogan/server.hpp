#pragma once

// JSON-over-HTTP front end of a ReadoutService:
//   POST /sessions                   {"reader_id"} -> session
//   GET  /sessions/{id}/next         -> current item or {"status":"complete"}
//   POST /sessions/{id}/ratings      {"item_id","malignancy","manipulation"}
//   GET  /readouts/{id}/export       admin (Authorization: Bearer <token>);
//                                    JSON lines, or CSV with ?format=csv
//   GET  /images/{item_id}.png       8-bit rendering of an item
// Errors are {"error": message} with 400/401/403/404/409/422.

#include <filesystem>
#include <memory>
#include <string>

#include "mammogan/readout.hpp"

namespace httplib {
class Server;
}

namespace mammogan {

class ReadoutServer {
 public:
  // An empty admin token disables the export endpoint.
  ReadoutServer(ReadoutService& service, std::filesystem::path package_dir, std::string admin_token);
  ~ReadoutServer();

  // Port 0 picks a free port. Returns the bound port; throws DataError on failure.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void run();
  void stop();

 private:
  ReadoutService& service_;
  std::filesystem::path package_dir_;
  std::string admin_token_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace mammogan
