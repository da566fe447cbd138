#pragma once

// Annotation manifest: JSON with a schema version, normalized boxes and
// image files referenced by path relative to the manifest's directory.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "layoutdetr/core/foreground.hpp"
#include "layoutdetr/core/random.hpp"
#include "layoutdetr/dataset/image_io.hpp"

namespace layoutdetr {

inline constexpr int kManifestSchemaVersion = 1;

struct AnnotationElement {
  std::string type = "text";  // "text" | "image"
  std::optional<std::string> cls;
  std::optional<std::string> string;
  NormalizedBox box;
  std::optional<std::string> patch_path;
  friend bool operator==(const AnnotationElement&, const AnnotationElement&) = default;
};

struct AnnotationRecord {
  std::string id;
  std::string background_path;
  int width = 0;
  int height = 0;
  std::vector<AnnotationElement> elements;
  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

struct DatasetManifest {
  int schema_version = kManifestSchemaVersion;
  std::uint64_t split_seed = 0;
  std::vector<AnnotationRecord> records;
  // Directory the relative paths resolve against; not serialized.
  std::string base_dir;

  const AnnotationRecord* find(const std::string& id) const {
    for (const auto& r : records)
      if (r.id == id) return &r;
    return nullptr;
  }
};

inline bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
  return a.schema_version == b.schema_version && a.split_seed == b.split_seed && a.records == b.records;
}

inline void to_json(nlohmann::json& j, const AnnotationElement& e) {
  j = nlohmann::json::object();
  j["type"] = e.type;
  if (e.cls) j["class"] = *e.cls;
  if (e.string) j["string"] = *e.string;
  j["box"] = {e.box.cy, e.box.cx, e.box.h, e.box.w};
  if (e.patch_path) j["patch_path"] = *e.patch_path;
}

inline void to_json(nlohmann::json& j, const AnnotationRecord& r) {
  j = {{"id", r.id}, {"background_path", r.background_path}, {"width", r.width}, {"height", r.height},
       {"elements", r.elements}};
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  return {{"schema_version", m.schema_version}, {"split_seed", m.split_seed}, {"records", m.records}};
}

namespace detail {

[[noreturn]] inline void record_error(const std::string& id, const std::string& field, const std::string& what) {
  throw ValidationError("record '" + id + "', field '" + field + "': " + what);
}

inline AnnotationElement parse_element(const nlohmann::json& j, const std::string& id, std::size_t k) {
  const std::string where = "elements[" + std::to_string(k) + "]";
  if (!j.is_object()) record_error(id, where, "must be an object");
  AnnotationElement e;
  if (!j.contains("type") || !j["type"].is_string()) record_error(id, where + ".type", "missing");
  e.type = j["type"].get<std::string>();
  if (e.type != "text" && e.type != "image") record_error(id, where + ".type", "must be text or image");
  if (!j.contains("box") || !j["box"].is_array() || j["box"].size() != 4)
    record_error(id, where + ".box", "must be [cy,cx,h,w]");
  double v[4];
  for (int i = 0; i < 4; ++i) {
    if (!j["box"][i].is_number()) record_error(id, where + ".box", "must be numeric");
    v[i] = j["box"][i].get<double>();
  }
  e.box = {v[0], v[1], v[2], v[3]};
  if (!is_valid_box(e.box)) record_error(id, where + ".box", "outside [0,1] or below minimum size");
  if (e.type == "text") {
    if (!j.contains("class") || !j["class"].is_string()) record_error(id, where + ".class", "missing");
    e.cls = j["class"].get<std::string>();
    if (!parse_text_class(*e.cls)) record_error(id, where + ".class", "unknown class '" + *e.cls + "'");
    if (!j.contains("string") || !j["string"].is_string()) record_error(id, where + ".string", "missing");
    e.string = j["string"].get<std::string>();
  } else {
    if (!j.contains("patch_path") || !j["patch_path"].is_string())
      record_error(id, where + ".patch_path", "missing");
    e.patch_path = j["patch_path"].get<std::string>();
  }
  return e;
}

}  // namespace detail

// Structural validation only (no file access).
inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("manifest must be a JSON object");
  DatasetManifest m;
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer())
    throw ValidationError("manifest: missing schema_version");
  m.schema_version = j["schema_version"].get<int>();
  if (m.schema_version != kManifestSchemaVersion)
    throw ValidationError("manifest: unsupported schema_version " + std::to_string(m.schema_version));
  m.split_seed = j.value("split_seed", std::uint64_t{0});
  if (!j.contains("records") || !j["records"].is_array()) throw ValidationError("manifest: missing records");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < j["records"].size(); ++i) {
    const auto& jr = j["records"][i];
    AnnotationRecord r;
    r.id = jr.is_object() && jr.contains("id") && jr["id"].is_string() ? jr["id"].get<std::string>()
                                                                         : "#" + std::to_string(i);
    if (!jr.is_object() || !jr.contains("id")) detail::record_error(r.id, "id", "missing");
    if (!ids.insert(r.id).second) detail::record_error(r.id, "id", "duplicate id");
    if (!jr.contains("background_path") || !jr["background_path"].is_string())
      detail::record_error(r.id, "background_path", "missing");
    r.background_path = jr["background_path"].get<std::string>();
    for (const char* f : {"width", "height"}) {
      if (!jr.contains(f) || !jr[f].is_number_integer() || jr[f].get<long long>() < 1)
        detail::record_error(r.id, f, "must be a positive integer");
    }
    r.width = jr["width"].get<int>();
    r.height = jr["height"].get<int>();
    if (!jr.contains("elements") || !jr["elements"].is_array()) detail::record_error(r.id, "elements", "missing");
    for (std::size_t k = 0; k < jr["elements"].size(); ++k)
      r.elements.push_back(detail::parse_element(jr["elements"][k], r.id, k));
    m.records.push_back(std::move(r));
  }
  return m;
}

inline std::string resolve_path(const DatasetManifest& m, const std::string& rel) {
  if (m.base_dir.empty() || std::filesystem::path(rel).is_absolute()) return rel;
  return (std::filesystem::path(m.base_dir) / rel).string();
}

inline void check_files_exist(const DatasetManifest& m) {
  for (const auto& r : m.records) {
    if (!std::filesystem::exists(resolve_path(m, r.background_path)))
      throw IoError("record '" + r.id + "', field 'background_path': missing file " + r.background_path);
    for (std::size_t k = 0; k < r.elements.size(); ++k)
      if (r.elements[k].patch_path && !std::filesystem::exists(resolve_path(m, *r.elements[k].patch_path)))
        throw IoError("record '" + r.id + "', field 'elements[" + std::to_string(k) +
                      "].patch_path': missing file " + *r.elements[k].patch_path);
  }
}

inline DatasetManifest load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("manifest " + path + " does not parse: " + e.what());
  }
  DatasetManifest m = manifest_from_json(j);
  m.base_dir = std::filesystem::path(path).parent_path().string();
  check_files_exist(m);
  return m;
}

inline void save_dataset(const std::string& path, const DatasetManifest& m) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path);
  out << manifest_to_json(m).dump(2) << '\n';
  if (!out) throw IoError("write failed for manifest " + path);
}

// Deterministic Fisher-Yates on indices; the first 10% (floored) of the
// permutation become the test split. Returns {train, test} index lists.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, std::uint64_t seed) {
  if (n < 10) throw ConfigurationError("train/test split: need at least 10 records, have " + std::to_string(n));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x5911));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[std::size_t(rng.next_u64() % (i + 1))]);
  const std::size_t n_test = n / 10;
  std::vector<std::size_t> test(order.begin(), order.begin() + std::ptrdiff_t(n_test));
  std::vector<std::size_t> train(order.begin() + std::ptrdiff_t(n_test), order.end());
  return {train, test};
}

inline std::pair<DatasetManifest, DatasetManifest> split_train_test(const DatasetManifest& m, std::uint64_t seed) {
  const auto [tr, te] = split_indices(m.records.size(), seed);
  DatasetManifest train = m, test = m;
  train.records.clear();
  test.records.clear();
  train.split_seed = test.split_seed = seed;
  for (auto i : tr) train.records.push_back(m.records[i]);
  for (auto i : te) test.records.push_back(m.records[i]);
  return {train, test};
}

// Materializes one record: decodes images, builds foreground and layout.
inline DesignSample load_sample(const DatasetManifest& m, const AnnotationRecord& r) {
  DesignSample s;
  s.id = r.id;
  s.background = io::read_image(resolve_path(m, r.background_path));
  std::vector<NormalizedBox> boxes;
  for (const auto& e : r.elements) {
    if (e.type == "text") {
      s.foreground.elements.push_back(TextElement{*e.string, text_class_or_throw(*e.cls)});
    } else {
      s.foreground.elements.push_back(ImageElement{io::read_image(resolve_path(m, *e.patch_path))});
    }
    boxes.push_back(e.box);
  }
  s.layout = Layout::from_boxes(std::move(boxes));
  validate_sample(s);
  return s;
}

inline std::vector<DesignSample> load_samples(const DatasetManifest& m) {
  std::vector<DesignSample> out;
  out.reserve(m.records.size());
  for (const auto& r : m.records) out.push_back(load_sample(m, r));
  return out;
}

}  // namespace layoutdetr
