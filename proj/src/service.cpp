#include "spm/service.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "spm/rng.hpp"

namespace spm {

namespace {

using nlohmann::json;

struct BadRequest {
  int status;
  std::string reason;
  std::string detail;
};

HttpReply json_reply(int status, const json& j) { return {status, "application/json", j.dump(), {}}; }

HttpReply png_reply(const Image8& img) { return {200, "image/png", encode_png(img), {}}; }

const std::string& field(const FormFields& form, const std::string& name) {
  auto it = form.find(name);
  if (it == form.end()) throw BadRequest{400, "missing_field", "multipart field '" + name + "' is required"};
  return it->second;
}

Image8 decode_field(const FormFields& form, const std::string& name, std::size_t channels) {
  try {
    return decode_png(field(form, name), channels);
  } catch (const ImageError& e) {
    throw BadRequest{400, "bad_png", name + ": " + e.what()};
  }
}

std::string dims(const Image8& im) { return std::to_string(im.w) + "x" + std::to_string(im.h); }

void check_labels(const LabelGrid& labels, const Mask* mask, std::size_t num_classes, const std::string& name) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (mask && !mask->data[i]) continue;
    if (static_cast<std::size_t>(labels.data[i]) >= num_classes) {
      throw BadRequest{422, "unknown_class",
                       name + ": class " + std::to_string(labels.data[i]) + " at (" + std::to_string(i / labels.w) +
                           "," + std::to_string(i % labels.w) + ") is not in GET /classes"};
    }
  }
}

HttpReply bad(const BadRequest& b) { return json_reply(b.status, {{"error", b.reason}, {"detail", b.detail}}); }

}  // namespace

LoadedModel load_model(const std::string& path) {
  TrainingState st = load_checkpoint(path);
  freeze(*st.pyramid);
  return {std::filesystem::path(path).stem().string(), std::shared_ptr<const Pyramid<float>>(std::move(st.pyramid))};
}

EditService::EditService(LoadedModel active, std::string checkpoint_dir)
    : active_(std::move(active)), checkpoint_dir_(std::move(checkpoint_dir)) {
  if (!active_.pyramid) throw std::invalid_argument("EditService needs a model");
  cache_[active_.id] = active_;
}

void EditService::activate(LoadedModel model) {
  if (!model.pyramid) throw std::invalid_argument("activate: empty model");
  std::lock_guard lock(mu_);
  cache_[model.id] = model;
  active_ = std::move(model);
  spdlog::info("service: active checkpoint is now {}", active_.id);
}

LoadedModel EditService::active() const {
  std::lock_guard lock(mu_);
  return active_;
}

HttpReply EditService::classes() const {
  json arr = json::array();
  const auto& cls = synthetic_classes();
  const std::size_t n = active().pyramid->config().num_classes;
  for (std::size_t i = 0; i < n; ++i) {
    // Models trained on other data get generic names and a gray ramp.
    const std::string name = i < cls.size() ? cls[i].name : "class_" + std::to_string(i);
    std::array<std::uint8_t, 3> c{};
    if (i < cls.size()) {
      c = cls[i].color;
    } else {
      const auto g = static_cast<std::uint8_t>(255 * i / n);
      c = {g, g, g};
    }
    char hex[8];
    std::snprintf(hex, sizeof hex, "#%02x%02x%02x", c[0], c[1], c[2]);
    arr.push_back({{"id", i}, {"name", name}, {"color", hex}});
  }
  return json_reply(200, arr);
}

HttpReply EditService::checkpoints() const {
  json list = json::array();
  std::vector<std::string> ids;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, m] : cache_) ids.push_back(id);
  }
  if (!checkpoint_dir_.empty() && std::filesystem::is_directory(checkpoint_dir_)) {
    for (const auto& e : std::filesystem::directory_iterator(checkpoint_dir_)) {
      if (e.path().extension() == ".ckpt") ids.push_back(e.path().stem().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  const std::string act = active().id;
  for (const auto& id : ids) list.push_back({{"id", id}, {"active", id == act}});
  return json_reply(200, list);
}

LoadedModel EditService::resolve(const FormFields& form) {
  auto it = form.find("checkpoint");
  if (it == form.end() || it->second.empty()) return active();
  const std::string& id = it->second;
  {
    std::lock_guard lock(mu_);
    if (auto c = cache_.find(id); c != cache_.end()) return c->second;
  }
  const bool safe = id.find('/') == std::string::npos && id.find("..") == std::string::npos;
  const auto path = std::filesystem::path(checkpoint_dir_) / (id + ".ckpt");
  if (!safe || checkpoint_dir_.empty() || !std::filesystem::exists(path)) {
    throw BadRequest{404, "unknown_checkpoint", "no checkpoint with id '" + id + "'"};
  }
  LoadedModel m = load_model(path.string());
  std::lock_guard lock(mu_);
  return cache_.emplace(id, std::move(m)).first->second;
}

HttpReply EditService::failure(const std::string& where, const std::exception& e) {
  std::uint64_t n;
  {
    std::lock_guard lock(session_mu_);
    n = next_incident_++;
  }
  const auto now = static_cast<std::uint64_t>(std::chrono::system_clock::now().time_since_epoch().count());
  char id[24];
  std::snprintf(id, sizeof id, "inc-%016llx", static_cast<unsigned long long>(splitmix64(now ^ n)));
  spdlog::error("{} {}: {}", id, where, e.what());
  return json_reply(500, {{"error", "inference_failed"}, {"incident", id}});
}

HttpReply EditService::edit(const FormFields& form) {
  try {
    const LoadedModel model = resolve(form);
    EditRequest req;
    req.image = decode_field(form, "image", 3);
    const Image8 mask = decode_field(form, "mask", 1);
    const Image8 labels = decode_field(form, "labels", 1);
    if (mask.h != req.image.h || mask.w != req.image.w || labels.h != req.image.h || labels.w != req.image.w) {
      throw BadRequest{422, "dimension_mismatch",
                       "image " + dims(req.image) + ", mask " + dims(mask) + ", labels " + dims(labels)};
    }
    req.mask = to_mask(mask);
    req.labels = to_labels(labels);
    check_labels(req.labels, &req.mask, model.pyramid->config().num_classes, "labels");
    try {
      return png_reply(spm::edit(req, *model.pyramid));
    } catch (const std::exception& e) {
      return failure("POST /edit", e);
    }
  } catch (const BadRequest& b) {
    return bad(b);
  } catch (const std::exception& e) {
    return failure("POST /edit", e);
  }
}

HttpReply EditService::panorama_step(const FormFields& form) {
  try {
    std::string sid;
    Session session;
    if (auto it = form.find("session"); it != form.end() && !it->second.empty()) {
      sid = it->second;
      std::lock_guard lock(session_mu_);
      auto s = sessions_.find(sid);
      if (s == sessions_.end()) throw BadRequest{404, "unknown_session", "no panorama session '" + sid + "'"};
      session = s->second;
    } else {
      session.model = resolve(form);
      const Image8 image = decode_field(form, "image", 3);
      const Image8 labels = decode_field(form, "canvas_labels", 1);
      if (labels.h != image.h || labels.w != image.w) {
        throw BadRequest{422, "dimension_mismatch", "image " + dims(image) + ", canvas_labels " + dims(labels)};
      }
      const auto& cfg = session.model.pyramid->config();
      if (image.h != cfg.base_h || image.w < cfg.base_w / 2) {
        throw BadRequest{422, "bad_canvas", "canvas must be " + std::to_string(cfg.base_h) + " px high and at least " +
                                                std::to_string(cfg.base_w / 2) + " px wide, got " + dims(image)};
      }
      session.canvas = {image, to_labels(labels)};
      check_labels(session.canvas.labels, nullptr, cfg.num_classes, "canvas_labels");
    }
    const auto& cfg = session.model.pyramid->config();
    LabelGrid window;
    if (auto it = form.find("window_labels"); it != form.end()) {
      const Image8 wl = decode_field(form, "window_labels", 1);
      if (wl.h != cfg.base_h || wl.w != cfg.base_w) {
        throw BadRequest{422, "dimension_mismatch", "window_labels must be " + std::to_string(cfg.base_w) + "x" +
                                                        std::to_string(cfg.base_h) + ", got " + dims(wl)};
      }
      window = to_labels(wl);
      check_labels(window, nullptr, cfg.num_classes, "window_labels");
    } else {
      window = extend_rightmost_column()(0, session.canvas.labels, cfg.base_h, cfg.base_w);
    }
    try {
      session.canvas = spm::panorama_step(session.canvas, window, *session.model.pyramid);
    } catch (const std::exception& e) {
      return failure("POST /panorama/step", e);
    }
    {
      std::lock_guard lock(session_mu_);
      if (sid.empty()) sid = "pano-" + std::to_string(next_session_++);
      sessions_[sid] = session;
    }
    HttpReply r = png_reply(session.canvas.image);
    r.headers["X-Session-Id"] = sid;
    r.headers["X-Canvas-Width"] = std::to_string(session.canvas.image.w);
    return r;
  } catch (const BadRequest& b) {
    return bad(b);
  } catch (const std::exception& e) {
    return failure("POST /panorama/step", e);
  }
}

namespace {

FormFields form_of(const httplib::Request& req) {
  FormFields f;
  for (const auto& [name, file] : req.files) f[name] = file.content;
  for (const auto& [name, value] : req.params) f.emplace(name, value);
  return f;
}

void send(httplib::Response& res, const HttpReply& r) {
  res.status = r.status;
  for (const auto& [k, v] : r.headers) res.set_header(k, v);
  res.set_content(r.body, r.content_type);
}

}  // namespace

void EditService::bind(httplib::Server& server) {
  server.Get("/classes", [this](const httplib::Request&, httplib::Response& res) { send(res, classes()); });
  server.Get("/checkpoints", [this](const httplib::Request&, httplib::Response& res) { send(res, checkpoints()); });
  server.Post("/edit", [this](const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data()) {
      return send(res, bad({415, "not_multipart", "POST /edit expects multipart/form-data"}));
    }
    send(res, edit(form_of(req)));
  });
  server.Post("/panorama/step", [this](const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data()) {
      return send(res, bad({415, "not_multipart", "POST /panorama/step expects multipart/form-data"}));
    }
    send(res, panorama_step(form_of(req)));
  });
}

}  // namespace spm
