#pragma once

// HTTP front end for the editor: POST /edit, GET /classes, GET /checkpoints,
// POST /panorama/step. Handlers are plain functions over a parsed request so
// they can be exercised without a socket; bind() wires them into httplib.

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "spm/app.hpp"

namespace httplib {
class Server;
}

namespace spm {

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

// Multipart fields by name (file contents or plain values).
using FormFields = std::map<std::string, std::string>;

struct LoadedModel {
  std::string id;
  std::shared_ptr<const Pyramid<float>> pyramid;
};

class EditService {
 public:
  // checkpoint_dir is scanned for *.ckpt files by GET /checkpoints and when a
  // request names a checkpoint id (the file stem).
  EditService(LoadedModel active, std::string checkpoint_dir = {});

  HttpReply classes() const;
  HttpReply checkpoints() const;
  HttpReply edit(const FormFields& form);
  // First call: image + canvas_labels (and optional window_labels); later
  // calls: session + optional window_labels. Replies with the whole canvas.
  HttpReply panorama_step(const FormFields& form);

  // Atomic replacement of the default model; in-flight requests keep the
  // snapshot they started with.
  void activate(LoadedModel model);
  LoadedModel active() const;

  void bind(httplib::Server& server);

 private:
  LoadedModel resolve(const FormFields& form);
  HttpReply failure(const std::string& where, const std::exception& e);

  mutable std::mutex mu_;
  LoadedModel active_;
  std::string checkpoint_dir_;
  std::map<std::string, LoadedModel> cache_;

  struct Session {
    LoadedModel model;
    Canvas canvas;
  };
  std::mutex session_mu_;
  std::map<std::string, Session> sessions_;
  std::uint64_t next_session_ = 1;
  std::uint64_t next_incident_ = 1;
};

// Loads a checkpoint's pyramid and freezes it for inference.
LoadedModel load_model(const std::string& path);

}  // namespace spm
