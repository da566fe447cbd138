#pragma once

// Durable session store: one JSON document per session under
// <dir>/sessions, images content-addressed under <dir>/images. Survives
// restarts; sessions idle longer than the TTL are treated as absent and
// swept.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "layoutdetr/core/errors.hpp"
#include "layoutdetr/core/geometry.hpp"
#include "layoutdetr/core/random.hpp"
#include "layoutdetr/dataset/image_io.hpp"

namespace layoutdetr::service {

namespace fs = std::filesystem;

using Clock = std::function<double()>;  // seconds since the epoch

inline double wall_clock() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

struct ForegroundInput {
  std::string type = "text";  // text | image
  std::string cls;            // canonical class name for text
  std::string text;
  std::string image;          // content hash for image elements
  std::optional<std::string> color;  // stored for the UI; rendering uses the contrast rules
};

inline void to_json(nlohmann::json& j, const ForegroundInput& f) {
  j = {{"type", f.type}};
  if (f.type == "text") {
    j["class"] = f.cls;
    j["text"] = f.text;
  } else {
    j["image"] = f.image;
  }
  if (f.color) j["color"] = *f.color;
}

inline void from_json(const nlohmann::json& j, ForegroundInput& f) {
  f.type = j.value("type", "text");
  f.cls = j.value("class", "");
  f.text = j.value("text", "");
  f.image = j.value("image", "");
  if (j.contains("color")) f.color = j.at("color").get<std::string>();
}

struct Candidate {
  int index = 0;
  std::vector<NormalizedBox> boxes;
  std::optional<std::string> preview;  // image hash
  std::vector<int> font_sizes;
  std::optional<std::string> warning;
};

inline nlohmann::json boxes_json(const std::vector<NormalizedBox>& boxes) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& b : boxes) a.push_back({b.cy, b.cx, b.h, b.w});
  return a;
}

inline std::vector<NormalizedBox> boxes_from_json(const nlohmann::json& a) {
  std::vector<NormalizedBox> out;
  for (const auto& v : a) {
    if (v.is_array() && v.size() == 4 && std::all_of(v.begin(), v.end(), [](const auto& x) { return x.is_number(); }))
      out.push_back({v[0].get<double>(), v[1].get<double>(), v[2].get<double>(), v[3].get<double>()});
    else if (v.is_object())
      out.push_back({v.at("cy").get<double>(), v.at("cx").get<double>(), v.at("h").get<double>(), v.at("w").get<double>()});
    else
      throw ValidationError("box must be [cy, cx, h, w] or {cy, cx, h, w}");
  }
  return out;
}

inline void to_json(nlohmann::json& j, const Candidate& c) {
  j = {{"index", c.index}, {"layout", boxes_json(c.boxes)}, {"font_sizes", c.font_sizes}};
  j["preview"] = c.preview ? nlohmann::json(*c.preview) : nlohmann::json(nullptr);
  if (c.warning) j["warning"] = *c.warning;
}

inline void from_json(const nlohmann::json& j, Candidate& c) {
  c.index = j.at("index").get<int>();
  c.boxes = boxes_from_json(j.at("layout"));
  c.font_sizes = j.value("font_sizes", std::vector<int>{});
  if (!j.at("preview").is_null()) c.preview = j.at("preview").get<std::string>();
  if (j.contains("warning")) c.warning = j.at("warning").get<std::string>();
}

struct BackgroundRef {
  std::string image;  // content hash
  int height = 0;
  int width = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BackgroundRef, image, height, width)

struct DesignSession {
  std::string id;
  double created_at = 0;
  double updated_at = 0;
  std::uint64_t seed = 0;
  std::optional<BackgroundRef> background;
  std::vector<ForegroundInput> foreground;
  int button_radius = 8;
  std::string font = "Arial";
  std::vector<Candidate> candidates;
  std::optional<int> selected;
  std::vector<NormalizedBox> edited;  // working copy of the selected layout
};

inline void to_json(nlohmann::json& j, const DesignSession& s) {
  j = {{"id", s.id},
       {"created_at", s.created_at},
       {"updated_at", s.updated_at},
       {"seed", std::to_string(s.seed)},
       {"foreground", s.foreground},
       {"button_radius", s.button_radius},
       {"font", s.font},
       {"candidates", s.candidates}};
  j["background"] = s.background ? nlohmann::json(*s.background) : nlohmann::json(nullptr);
  j["selected"] = s.selected ? nlohmann::json(*s.selected) : nlohmann::json(nullptr);
  j["layout"] = s.selected ? boxes_json(s.edited) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, DesignSession& s) {
  s.id = j.at("id").get<std::string>();
  s.created_at = j.at("created_at").get<double>();
  s.updated_at = j.at("updated_at").get<double>();
  s.seed = std::stoull(j.at("seed").get<std::string>());
  if (!j.at("background").is_null()) s.background = j.at("background").get<BackgroundRef>();
  s.foreground = j.at("foreground").get<std::vector<ForegroundInput>>();
  s.button_radius = j.value("button_radius", 8);
  s.font = j.value("font", "Arial");
  s.candidates = j.at("candidates").get<std::vector<Candidate>>();
  if (!j.at("selected").is_null()) s.selected = j.at("selected").get<int>();
  if (!j.at("layout").is_null()) s.edited = boxes_from_json(j.at("layout"));
}

inline std::string content_hash(const std::vector<std::uint8_t>& bytes) {
  const std::uint64_t a = hash_string(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  const std::uint64_t b = mix_seed(a, bytes.size());
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", (unsigned long long)a, (unsigned long long)b);
  return buf;
}

inline bool is_session_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) return false;
  return true;
}

class SessionStore {
 public:
  SessionStore(std::string dir, double ttl_seconds, Clock clock = wall_clock, std::optional<std::uint64_t> id_seed = {})
      : dir_(std::move(dir)), ttl_(ttl_seconds), clock_(std::move(clock)), id_seed_(id_seed) {
    std::error_code ec;
    fs::create_directories(fs::path(dir_) / "sessions", ec);
    fs::create_directories(fs::path(dir_) / "images", ec);
    if (ec) throw IoError("session store: cannot create " + dir_ + ": " + ec.message());
  }

  double now() const { return clock_(); }

  // Fresh URL-safe id: random, or a seeded sequence in deterministic mode.
  DesignSession create() {
    std::lock_guard<std::mutex> lock(mu_);
    DesignSession s;
    do {
      std::uint64_t a, b;
      if (id_seed_) {
        a = mix_seed(*id_seed_, counter_++);
        b = mix_seed(a, 0x1d);
      } else {
        std::random_device rd;
        a = (std::uint64_t(rd()) << 32) ^ rd();
        b = (std::uint64_t(rd()) << 32) ^ rd();
      }
      char buf[40];
      std::snprintf(buf, sizeof buf, "s%016llx%016llx", (unsigned long long)a, (unsigned long long)b);
      s.id = buf;
    } while (fs::exists(session_path(s.id)));
    s.created_at = s.updated_at = now();
    write_locked(s);
    return s;
  }

  std::optional<DesignSession> load(const std::string& id) {
    if (!is_session_id(id)) return std::nullopt;
    std::lock_guard<std::mutex> lock(mu_);
    const auto path = session_path(id);
    std::ifstream in(path);
    if (!in) return std::nullopt;
    DesignSession s;
    try {
      s = nlohmann::json::parse(in).get<DesignSession>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError("session store: corrupt session " + id + ": " + e.what());
    }
    if (expired(s)) {
      std::error_code ec;
      fs::remove(path, ec);
      return std::nullopt;
    }
    return s;
  }

  void save(DesignSession& s) {
    std::lock_guard<std::mutex> lock(mu_);
    s.updated_at = now();
    write_locked(s);
  }

  bool remove(const std::string& id) {
    if (!is_session_id(id)) return false;
    std::lock_guard<std::mutex> lock(mu_);
    std::error_code ec;
    return fs::remove(session_path(id), ec);
  }

  // Deletes expired sessions; returns how many.
  int sweep() {
    std::lock_guard<std::mutex> lock(mu_);
    int n = 0;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(fs::path(dir_) / "sessions", ec)) {
      if (entry.path().extension() != ".json") continue;
      try {
        std::ifstream in(entry.path());
        const auto j = nlohmann::json::parse(in);
        if (now() - j.at("updated_at").get<double>() > ttl_) {
          fs::remove(entry.path(), ec);
          ++n;
        }
      } catch (const nlohmann::json::exception&) {
      }
    }
    return n;
  }

  // Per-session lock: one in-flight mutation (generation included) per
  // session; other sessions proceed.
  std::shared_ptr<std::mutex> session_mutex(const std::string& id) {
    std::lock_guard<std::mutex> lock(mu_);
    auto& m = locks_[id];
    if (!m) m = std::make_shared<std::mutex>();
    return m;
  }

  std::string put_image(const std::vector<std::uint8_t>& bytes) {
    const std::string h = content_hash(bytes);
    const auto path = image_path(h);
    if (!fs::exists(path)) io::write_file_bytes(path.string(), bytes);
    return h;
  }

  std::optional<std::vector<std::uint8_t>> get_image(const std::string& hash) const {
    if (hash.size() != 32 || hash.find_first_not_of("0123456789abcdef") != std::string::npos) return std::nullopt;
    const auto path = image_path(hash);
    if (!fs::exists(path)) return std::nullopt;
    return io::read_file_bytes(path.string());
  }

  fs::path image_path(const std::string& hash) const { return fs::path(dir_) / "images" / (hash + ".img"); }
  const std::string& dir() const { return dir_; }

 private:
  fs::path session_path(const std::string& id) const { return fs::path(dir_) / "sessions" / (id + ".json"); }
  bool expired(const DesignSession& s) const { return now() - s.updated_at > ttl_; }

  void write_locked(const DesignSession& s) {
    const auto path = session_path(s.id);
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw IoError("session store: cannot write " + tmp);
      out << nlohmann::json(s).dump();
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("session store: cannot persist " + s.id + ": " + ec.message());
  }

  std::string dir_;
  double ttl_;
  Clock clock_;
  std::optional<std::uint64_t> id_seed_;
  std::uint64_t counter_ = 0;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<std::mutex>> locks_;
};

}  // namespace layoutdetr::service
