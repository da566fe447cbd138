#pragma once

// The design flow behind the HTTP API, transport-free so it can be driven
// directly from tests: upload -> candidates -> select -> edit -> export.

#include <algorithm>
#include <cctype>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "layoutdetr/dataset/image_io.hpp"
#include "layoutdetr/dataset/manifest.hpp"
#include "layoutdetr/networks/inference.hpp"
#include "layoutdetr/networks/models.hpp"
#include "layoutdetr/renderer/render.hpp"
#include "layoutdetr/service/run_config.hpp"
#include "layoutdetr/service/session_store.hpp"

namespace layoutdetr::service {

struct Response {
  int status = 200;
  nlohmann::json body;
  // Set for binary responses (images); body is ignored then.
  std::string bytes;
  std::string content_type = "application/json";
};

struct ServiceError : std::runtime_error {
  int status;
  ServiceError(int s, const std::string& m) : std::runtime_error(m), status(s) {}
};

// UI labels that map onto the four text classes.
inline std::optional<TextClass> parse_class_alias(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  if (auto c = parse_text_class(name)) return c;
  if (name == "footnote") return TextClass::disclaimer;
  if (name == "logo" || name == "title" || name == "headline") return TextClass::header;
  if (name == "cta") return TextClass::button;
  return std::nullopt;
}

inline std::string image_url(const std::string& hash) { return "/v1/images/" + hash; }

class DesignService {
 public:
  using Model = nn::LayoutDetrModel<double>;

  DesignService(std::shared_ptr<const Model> model, RunConfig config, Clock clock = wall_clock)
      : model_(std::move(model)),
        config_(std::move(config)),
        store_(config_.service.store_dir, config_.service.session_ttl_hours * 3600.0, std::move(clock),
               config_.service.deterministic ? std::optional<std::uint64_t>(config_.service.seed) : std::nullopt) {
    config_.validate();
    if (!model_) throw ConfigurationError("service: no model");
  }

  SessionStore& store() { return store_; }
  const RunConfig& config() const { return config_; }

  Response health() const {
    return {200,
            {{"status", "ok"},
             {"network", model_->network_config()},
             {"embedder", model_->embedder_config()},
             {"deterministic", config_.service.deterministic}}};
  }

  Response create_session() {
    return guarded([&] {
      store_.sweep();
      DesignSession s = store_.create();
      s.seed = mix_seed(config_.service.seed, hash_string(s.id));
      s.button_radius = config_.render.button_radius;
      s.font = config_.render.font_family;
      store_.save(s);
      return Response{201, view(s)};
    });
  }

  Response get_session(const std::string& id) {
    return guarded([&] { return Response{200, view(load(id))}; });
  }

  Response delete_session(const std::string& id) {
    return guarded([&] {
      if (!store_.remove(id)) throw ServiceError(404, "unknown session '" + id + "'");
      return Response{204, nullptr};
    });
  }

  Response put_background(const std::string& id, const std::vector<std::uint8_t>& bytes) {
    return guarded([&] {
      auto lock = lock_session(id);
      DesignSession s = load(id);
      const Image img = decode_or_422(bytes, "background");
      BackgroundRef ref{store_.put_image(bytes), img.height, img.width};
      if (!s.background || s.background->image != ref.image) invalidate(s);
      s.background = ref;
      store_.save(s);
      return Response{200,
                      {{"image", ref.image},
                       {"image_url", image_url(ref.image)},
                       {"height", ref.height},
                       {"width", ref.width},
                       {"working_resolution", model_->embedder_config().working_resolution}}};
    });
  }

  Response post_image(const std::vector<std::uint8_t>& bytes) {
    return guarded([&] {
      const Image img = decode_or_422(bytes, "image");
      const auto h = store_.put_image(bytes);
      return Response{201, {{"image", h}, {"image_url", image_url(h)}, {"height", img.height}, {"width", img.width}}};
    });
  }

  Response get_image(const std::string& hash) {
    auto bytes = store_.get_image(hash);
    if (!bytes) return error(404, "unknown image '" + hash + "'");
    Response r;
    r.bytes.assign(bytes->begin(), bytes->end());
    r.content_type = (bytes->size() >= 2 && (*bytes)[0] == 0xFF && (*bytes)[1] == 0xD8) ? "image/jpeg" : "image/png";
    return r;
  }

  // Body: {"elements": [{"type": "text", "class": "header", "text": "..."} |
  //                     {"type": "image", "image": "<hash>"}],
  //        "button_radius"?: int, "font"?: string}
  Response put_foreground(const std::string& id, const nlohmann::json& body) {
    return guarded([&] {
      auto lock = lock_session(id);
      DesignSession s = load(id);
      if (!body.is_object() || !body.contains("elements") || !body.at("elements").is_array())
        throw ServiceError(422, "body must be an object with an 'elements' array");
      std::vector<ForegroundInput> fg;
      const auto& els = body.at("elements");
      if (int(els.size()) > model_->network_config().max_elements)
        throw ServiceError(422, "at most " + std::to_string(model_->network_config().max_elements) +
                                    " elements are supported");
      for (std::size_t i = 0; i < els.size(); ++i) {
        const auto& e = els[i];
        const std::string where = "element " + std::to_string(i);
        if (!e.is_object()) throw ServiceError(422, where + ": must be an object");
        ForegroundInput f;
        f.type = e.value("type", "text");
        if (f.type == "text") {
          const std::string cls = e.value("class", "");
          const auto c = parse_class_alias(cls);
          if (!c) throw ServiceError(422, where + ": invalid class '" + cls + "'");
          f.cls = std::string(to_string(*c));
          if (!e.contains("text") || !e.at("text").is_string()) throw ServiceError(422, where + ": missing text");
          f.text = e.at("text").get<std::string>();
          if (f.text.find_first_not_of(' ') == std::string::npos) throw ServiceError(422, where + ": empty text");
        } else if (f.type == "image") {
          f.image = e.value("image", "");
          auto bytes = store_.get_image(f.image);
          if (!bytes) throw ServiceError(422, where + ": unknown image '" + f.image + "'");
        } else {
          throw ServiceError(422, where + ": type must be text or image");
        }
        if (e.contains("color")) {
          const auto col = e.at("color").get<std::string>();
          if (col != "black" && col != "white" && col != "auto")
            throw ServiceError(422, where + ": color must be black|white|auto");
          f.color = col;
        }
        fg.push_back(std::move(f));
      }
      int radius = s.button_radius;
      if (body.contains("button_radius")) {
        if (!body.at("button_radius").is_number_integer() || body.at("button_radius").get<int>() < 0)
          throw ServiceError(422, "button_radius must be a non-negative integer");
        radius = body.at("button_radius").get<int>();
      }
      const std::string font = body.value("font", s.font);
      const bool changed = nlohmann::json(fg) != nlohmann::json(s.foreground) || radius != s.button_radius ||
                           font != s.font;
      if (changed) invalidate(s);
      s.foreground = std::move(fg);
      s.button_radius = radius;
      s.font = font;
      store_.save(s);
      return Response{200, {{"elements", s.foreground}, {"element_count", s.foreground.size()},
                            {"button_radius", s.button_radius}, {"font", s.font}}};
    });
  }

  // Generates `count` candidates (default from the config, six). Each is
  // one noise draw, center-aligned, jittered with its own seed and
  // rendered; a candidate that cannot be rendered keeps its layout and
  // carries a warning instead of a preview.
  Response post_candidates(const std::string& id, std::optional<int> count) {
    return guarded([&] {
      auto lock = lock_session(id);
      DesignSession s = load(id);
      const int n = count.value_or(config_.service.default_candidates);
      if (n < 1 || n > config_.service.max_candidates)
        throw ServiceError(422, "count must be in 1.." + std::to_string(config_.service.max_candidates));
      if (!s.background) throw ServiceError(409, "upload a background first");
      if (s.foreground.empty()) throw ServiceError(409, "add at least one foreground element first");
      const Image bg = load_image(s.background->image);
      const ForegroundSet fg = foreground_set(s);
      const std::uint64_t seed = mix_seed(s.seed, 0xCA);
      const auto layouts = generate_candidates(*model_, bg, fg, n, seed);
      const auto spec = render_spec(s);
      s.candidates.clear();
      s.selected.reset();
      s.edited.clear();
      int failures = 0;
      for (int k = 0; k < n; ++k) {
        Candidate c;
        c.index = k;
        const std::uint64_t jitter_seed = mix_seed(seed, 1000 + std::uint64_t(k));
        try {
          const auto r = render::render_design(bg, fg, layouts[std::size_t(k)], spec, jitter_seed);
          c.boxes = r.layout.boxes;
          c.preview = store_.put_image(io::encode_png(r.image));
          for (const auto& e : r.elements) c.font_sizes.push_back(e.font_size);
        } catch (const OverflowError& e) {
          c.boxes = render::prepare_layout(layouts[std::size_t(k)], spec, jitter_seed).boxes;
          c.warning = std::string("render_overflow: ") + e.what();
          ++failures;
        }
        s.candidates.push_back(std::move(c));
      }
      store_.save(s);
      nlohmann::json body = {{"candidates", candidates_view(s)}, {"count", n}};
      if (failures == n) {
        body["error"] = "no candidate could be rendered; layouts returned unrendered";
        return Response{500, body};
      }
      return Response{200, body};
    });
  }

  // Body: {"index": k}
  Response select(const std::string& id, const nlohmann::json& body) {
    return guarded([&] {
      auto lock = lock_session(id);
      DesignSession s = load(id);
      if (s.candidates.empty()) throw ServiceError(409, "no candidates generated yet");
      if (!body.is_object() || !body.contains("index") || !body.at("index").is_number_integer())
        throw ServiceError(422, "body must be {\"index\": <int>}");
      const int k = body.at("index").get<int>();
      if (k < 0 || k >= int(s.candidates.size())) throw ServiceError(422, "candidate index out of range");
      s.selected = k;
      s.edited = s.candidates[std::size_t(k)].boxes;
      store_.save(s);
      return Response{200, {{"selected", k}, {"layout", boxes_json(s.edited)}}};
    });
  }

  // Body: {"edits": [{"element": i, "box": [cy, cx, h, w]}]} and/or
  // {"layout": [[cy, cx, h, w], ...]} (full replacement). All or nothing.
  Response patch_layout(const std::string& id, const nlohmann::json& body) {
    return guarded([&] {
      auto lock = lock_session(id);
      DesignSession s = load(id);
      if (!s.selected) throw ServiceError(409, "select a candidate first");
      if (!body.is_object()) throw ServiceError(422, "body must be an object");
      auto boxes = s.edited;
      try {
        if (body.contains("layout")) {
          auto full = boxes_from_json(body.at("layout"));
          if (full.size() != boxes.size())
            throw ServiceError(422, "layout must have " + std::to_string(boxes.size()) + " boxes");
          boxes = std::move(full);
        }
        if (body.contains("edits")) {
          for (const auto& e : body.at("edits")) {
            const int i = e.at("element").get<int>();
            if (i < 0 || i >= int(boxes.size())) throw ServiceError(422, "element index out of range");
            boxes[std::size_t(i)] = boxes_from_json(nlohmann::json::array({e.at("box")})).front();
          }
        }
      } catch (const nlohmann::json::exception& e) {
        throw ServiceError(422, std::string("malformed edit: ") + e.what());
      } catch (const ValidationError& e) {
        throw ServiceError(422, e.what());
      }
      for (std::size_t i = 0; i < boxes.size(); ++i)
        if (!is_valid_box(boxes[i])) throw ServiceError(422, "element " + std::to_string(i) + ": invalid box");
      s.edited = std::move(boxes);
      store_.save(s);
      return Response{200, {{"selected", *s.selected}, {"layout", boxes_json(s.edited)}}};
    });
  }

  // Renders the edited layout exactly (no alignment snap, no jitter) at the
  // original background resolution.
  Response export_design(const std::string& id, bool as_png = false) {
    return guarded([&] {
      auto lock = lock_session(id);
      DesignSession s = load(id);
      if (!s.selected) throw ServiceError(409, "select a candidate first");
      const Image bg = load_image(s.background->image);
      const ForegroundSet fg = foreground_set(s);
      auto spec = render_spec(s);
      spec.jitter_fraction = 0;
      spec.center_align = false;
      spec.on_overflow = "shrink";
      const Layout layout = Layout::from_boxes(s.edited);
      const auto r = render::render_design(bg, fg, layout, spec, 0);
      const auto png = io::encode_png(r.image);
      if (as_png) {
        Response out;
        out.bytes.assign(png.begin(), png.end());
        out.content_type = "image/png";
        return out;
      }
      const std::string h = store_.put_image(png);
      AnnotationRecord rec;
      rec.id = s.id;
      rec.background_path = "images/" + s.background->image + ".img";
      rec.width = bg.width;
      rec.height = bg.height;
      nlohmann::json warnings = nlohmann::json::array();
      for (std::size_t i = 0; i < s.foreground.size(); ++i) {
        const auto& f = s.foreground[i];
        AnnotationElement e;
        e.type = f.type;
        e.box = s.edited[i];
        if (f.type == "text") {
          e.cls = f.cls;
          e.string = f.text;
        } else {
          e.patch_path = "images/" + f.image + ".img";
        }
        if (r.elements[i].overflow) warnings.push_back("element " + std::to_string(i) + " does not fit its box");
        rec.elements.push_back(std::move(e));
      }
      return Response{200,
                      {{"record", rec},
                       {"image", h},
                       {"image_url", image_url(h)},
                       {"render", render::to_json_record(r)},
                       {"warnings", warnings}}};
    });
  }

 private:
  static Response error(int status, const std::string& msg) { return {status, {{"error", msg}}}; }

  template <class F>
  Response guarded(F&& f) {
    try {
      return f();
    } catch (const ServiceError& e) {
      return error(e.status, e.what());
    } catch (const ValidationError& e) {
      return error(422, e.what());
    } catch (const std::exception& e) {
      return error(500, e.what());
    }
  }

  std::unique_lock<std::mutex> lock_session(const std::string& id) {
    // The store keeps the mutex alive for the process lifetime.
    return std::unique_lock<std::mutex>(*store_.session_mutex(id));
  }

  DesignSession load(const std::string& id) {
    auto s = store_.load(id);
    if (!s) throw ServiceError(404, "unknown session '" + id + "'");
    return *s;
  }

  static Image decode_or_422(const std::vector<std::uint8_t>& bytes, const std::string& what) {
    try {
      return io::decode_image(bytes);
    } catch (const IoError& e) {
      throw ServiceError(422, what + " is not a decodable image: " + e.what());
    }
  }

  Image load_image(const std::string& hash) {
    auto bytes = store_.get_image(hash);
    if (!bytes) throw ServiceError(500, "stored image " + hash + " is missing");
    return io::decode_image(*bytes);
  }

  ForegroundSet foreground_set(const DesignSession& s) {
    ForegroundSet fg;
    for (const auto& f : s.foreground) {
      if (f.type == "text")
        fg.elements.push_back(TextElement{f.text, text_class_or_throw(f.cls)});
      else
        fg.elements.push_back(ImageElement{load_image(f.image)});
    }
    return fg;
  }

  render::RenderSpec render_spec(const DesignSession& s) const {
    auto spec = config_.render;
    spec.button_radius = s.button_radius;
    spec.font_family = s.font;
    return spec;
  }

  static void invalidate(DesignSession& s) {
    s.candidates.clear();
    s.selected.reset();
    s.edited.clear();
  }

  nlohmann::json candidates_view(const DesignSession& s) const {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& c : s.candidates) {
      nlohmann::json j = c;
      j["preview_url"] = c.preview ? nlohmann::json(image_url(*c.preview)) : nlohmann::json(nullptr);
      a.push_back(std::move(j));
    }
    return a;
  }

  nlohmann::json view(const DesignSession& s) const {
    nlohmann::json j = s;
    j["candidates"] = candidates_view(s);
    j["expires_at"] = s.updated_at + config_.service.session_ttl_hours * 3600.0;
    return j;
  }

  std::shared_ptr<const Model> model_;
  RunConfig config_;
  SessionStore store_;
};

}  // namespace layoutdetr::service
