#pragma once

// Ingestion and persistence: feature stores, JSON-lines annotation /
// proposal / caption files, training-tuple construction and checkpoints.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "scrc/binary_io.hpp"
#include "scrc/error.hpp"
#include "scrc/geometry.hpp"
#include "scrc/model.hpp"
#include "scrc/text.hpp"

namespace scrc {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Feature store
//
// Layout (little-endian): "SCRCFEAT", u32 version = 1, u32 dim, u32 count,
// then count x { u16 key length, key bytes, dim x f32 }.

inline constexpr std::string_view kFeatureMagic = "SCRCFEAT";
inline constexpr std::uint32_t kFeatureVersion = 1;

/// Keyed fixed-dimension feature vectors. Keeps insertion order so that a
/// load/save cycle reproduces the file byte for byte.
class FeatureStore {
 public:
  FeatureStore() = default;
  explicit FeatureStore(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return keys_.size(); }
  const std::vector<std::string>& keys() const noexcept { return keys_; }

  void add(const std::string& key, std::vector<float> values) {
    if (values.size() != dim_)
      throw InputError("feature '" + key + "' has length " +
                       std::to_string(values.size()) + ", store dim is " +
                       std::to_string(dim_));
    if (key.size() > 0xFFFF) throw InputError("feature key longer than 65535 bytes");
    for (float v : values)
      if (!std::isfinite(v)) throw InputError("non-finite value in feature '" + key + "'");
    if (!index_.emplace(key, keys_.size()).second)
      throw InputError("duplicate feature key '" + key + "'");
    keys_.push_back(key);
    values_.push_back(std::move(values));
  }

  bool contains(const std::string& key) const { return index_.contains(key); }

  const std::vector<float>& at(const std::string& key) const {
    const auto it = index_.find(key);
    if (it == index_.end()) throw InputError("unknown feature key '" + key + "'");
    return values_[it->second];
  }

  std::vector<double> at_double(const std::string& key) const {
    const auto& v = at(key);
    return {v.begin(), v.end()};
  }

  friend bool operator==(const FeatureStore& a, const FeatureStore& b) {
    return a.dim_ == b.dim_ && a.keys_ == b.keys_ && a.values_ == b.values_;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> keys_;
  std::vector<std::vector<float>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline Bytes serialize_feature_store(const FeatureStore& store) {
  ByteWriter w;
  w.bytes(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(store.dim()));
  w.u32(static_cast<std::uint32_t>(store.size()));
  for (const auto& key : store.keys()) {
    w.u16(static_cast<std::uint16_t>(key.size()));
    w.bytes(key);
    for (float v : store.at(key)) w.f32(v);
  }
  return w.take();
}

inline FeatureStore parse_feature_store(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  if (r.str(kFeatureMagic.size(), "magic") != kFeatureMagic)
    throw FormatError("bad feature-store magic", 0);
  const auto version_at = r.offset();
  const auto version = r.u32("version");
  if (version != kFeatureVersion) throw UnsupportedVersionError(version, version_at);
  const auto dim = r.u32("dim");
  const auto count = r.u32("entry count");
  FeatureStore store(dim);
  for (std::uint32_t n = 0; n < count; ++n) {
    const auto entry_at = r.offset();
    const auto klen = r.u16("key length");
    auto key = r.str(klen, "key bytes");
    r.need(static_cast<std::size_t>(dim) * 4, "feature values");
    std::vector<float> values(dim);
    for (auto& v : values) v = r.f32("feature value");
    if (store.contains(key))
      throw FormatError("duplicate feature key '" + key + "'", entry_at);
    try {
      store.add(key, std::move(values));
    } catch (const InputError& e) {
      throw FormatError(e.what(), entry_at);
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last entry", r.offset());
  return store;
}

inline void save_feature_store(const FeatureStore& store, const std::string& path) {
  write_file(path, serialize_feature_store(store));
}

inline FeatureStore load_feature_store(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return parse_feature_store(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.message(), e.offset());
  }
}

// ---------------------------------------------------------------------------
// JSON-lines records

struct AnnotationRecord {
  std::string image_id;
  ImageSize size;
  BoundingBox box;
  std::string region_key;
  std::vector<std::string> descriptions;
};

struct ProposalSet {
  std::string image_id;
  std::vector<BoundingBox> boxes;
  std::vector<std::string> region_keys;
  std::optional<ImageSize> size;  // optional "width"/"height" fields
};

struct CaptionRecord {
  std::string image_id;
  std::vector<std::string> captions;
};

namespace detail {

template <typename F>
void for_each_json_line(const std::string& path, F&& on_record) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "' for reading");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw LineError(path, lineno, std::string("malformed JSON: ") + e.what());
    }
    try {
      if (!j.is_object()) throw InputError("record is not a JSON object");
      on_record(j);
    } catch (const LineError&) {
      throw;
    } catch (const Error& e) {
      throw LineError(path, lineno, e.what());
    } catch (const json::exception& e) {
      throw LineError(path, lineno, e.what());
    }
  }
}

inline const json& field(const json& j, const char* name) {
  const auto it = j.find(name);
  if (it == j.end()) throw InputError(std::string("missing field '") + name + "'");
  return *it;
}

inline std::string string_field(const json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_string()) throw InputError(std::string("field '") + name + "' must be a string");
  auto s = v.get<std::string>();
  if (s.empty()) throw InputError(std::string("field '") + name + "' is empty");
  return s;
}

inline double number_field(const json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_number()) throw InputError(std::string("field '") + name + "' must be a number");
  return v.get<double>();
}

inline std::vector<std::string> string_list(const json& v, const char* name) {
  if (!v.is_array()) throw InputError(std::string("field '") + name + "' must be an array");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw InputError(std::string("field '") + name + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

inline BoundingBox parse_box(const json& v) {
  if (!v.is_array() || v.size() != 4)
    throw InputError("box must be an array [x1, y1, x2, y2]");
  for (const auto& e : v)
    if (!e.is_number()) throw InputError("box coordinates must be numbers");
  BoundingBox b{v[0].get<double>(), v[1].get<double>(), v[2].get<double>(),
                v[3].get<double>()};
  if (!b.valid()) throw InputError("invalid box " + b.str() + " (need x2 > x1, y2 > y1)");
  return b;
}

inline json box_json(const BoundingBox& b) {
  return json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

}  // namespace detail

inline std::vector<AnnotationRecord> load_annotations(const std::string& path) {
  std::vector<AnnotationRecord> out;
  detail::for_each_json_line(path, [&](const json& j) {
    AnnotationRecord rec;
    rec.image_id = detail::string_field(j, "image_id");
    rec.size = {detail::number_field(j, "width"), detail::number_field(j, "height")};
    rec.box = detail::parse_box(detail::field(j, "box"));
    validate_box(rec.box, rec.size);
    rec.region_key = detail::string_field(j, "region_key");
    rec.descriptions = detail::string_list(detail::field(j, "descriptions"), "descriptions");
    if (rec.descriptions.empty()) throw InputError("descriptions is empty");
    out.push_back(std::move(rec));
  });
  return out;
}

inline constexpr std::size_t kDefaultMaxProposals = 100;

inline std::vector<ProposalSet> load_proposals(const std::string& path,
                                               std::size_t max_proposals = kDefaultMaxProposals) {
  std::vector<ProposalSet> out;
  detail::for_each_json_line(path, [&](const json& j) {
    ProposalSet set;
    set.image_id = detail::string_field(j, "image_id");
    const auto& boxes = detail::field(j, "boxes");
    if (!boxes.is_array()) throw InputError("field 'boxes' must be an array");
    for (const auto& b : boxes) set.boxes.push_back(detail::parse_box(b));
    set.region_keys = detail::string_list(detail::field(j, "region_keys"), "region_keys");
    if (set.boxes.size() != set.region_keys.size())
      throw InputError("boxes and region_keys differ in length");
    if (j.contains("width") || j.contains("height"))
      set.size = ImageSize{detail::number_field(j, "width"), detail::number_field(j, "height")};
    if (set.boxes.size() > max_proposals)
      throw InputError(std::to_string(set.boxes.size()) + " proposals exceed the limit of " +
                       std::to_string(max_proposals));
    out.push_back(std::move(set));
  });
  return out;
}

inline std::vector<CaptionRecord> load_captions(const std::string& path) {
  std::vector<CaptionRecord> out;
  detail::for_each_json_line(path, [&](const json& j) {
    CaptionRecord rec;
    rec.image_id = detail::string_field(j, "image_id");
    rec.captions = detail::string_list(detail::field(j, "captions"), "captions");
    if (rec.captions.empty()) throw InputError("captions is empty");
    out.push_back(std::move(rec));
  });
  return out;
}

inline std::string to_json_line(const AnnotationRecord& r) {
  json j{{"image_id", r.image_id},
         {"width", r.size.width},
         {"height", r.size.height},
         {"box", detail::box_json(r.box)},
         {"region_key", r.region_key},
         {"descriptions", r.descriptions}};
  return j.dump();
}

inline std::string to_json_line(const ProposalSet& p) {
  json boxes = json::array();
  for (const auto& b : p.boxes) boxes.push_back(detail::box_json(b));
  json j{{"image_id", p.image_id}, {"boxes", boxes}, {"region_keys", p.region_keys}};
  if (p.size) {
    j["width"] = p.size->width;
    j["height"] = p.size->height;
  }
  return j.dump();
}

inline std::string to_json_line(const CaptionRecord& c) {
  json j{{"image_id", c.image_id}, {"captions", c.captions}};
  return j.dump();
}

template <typename Record>
void save_json_lines(const std::vector<Record>& records, const std::string& path) {
  std::string text;
  for (const auto& r : records) {
    text += to_json_line(r);
    text += '\n';
  }
  write_text_file(path, text);
}

// ---------------------------------------------------------------------------
// Training tuples

/// One (image, box, description) training instance.
struct TrainingTuple {
  std::string region_key;
  std::string image_id;
  SpatialFeature spatial{};
  TokenSequence tokens;
};

/// Expands every (object, description) pair into a tuple.
inline std::vector<TrainingTuple> build_training_tuples(
    const std::vector<AnnotationRecord>& records, const FeatureStore& region_store,
    const FeatureStore& context_store, const Vocabulary& vocab) {
  std::vector<TrainingTuple> out;
  for (const auto& rec : records) {
    if (!region_store.contains(rec.region_key))
      throw InputError("region feature key '" + rec.region_key + "' not found");
    if (!context_store.contains(rec.image_id))
      throw InputError("context feature key '" + rec.image_id + "' not found");
    const auto spatial = encode_spatial(rec.box, rec.size);
    for (const auto& desc : rec.descriptions) {
      auto tokens = encode(vocab, desc);
      if (tokens.empty())
        throw InputError("description '" + desc + "' of region '" + rec.region_key +
                         "' has no tokens");
      out.push_back({rec.region_key, rec.image_id, spatial, std::move(tokens)});
    }
  }
  return out;
}

inline VisualInput visual_input(const FeatureStore& region_store,
                                const FeatureStore& context_store,
                                const std::string& region_key, const std::string& image_id,
                                const SpatialFeature& spatial) {
  return {region_store.at_double(region_key), context_store.at_double(image_id), spatial};
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (little-endian): "SCRCCKPT", u32 version = 1, u32 header length,
// header JSON, u32 tensor count, then per tensor { u16 name length, name,
// u8 rank, rank x u32 dims, f32 data }.

inline constexpr std::string_view kCheckpointMagic = "SCRCCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  ScrcConfig config;
  Vocabulary vocab;
  ScrcParams<T> params;
};

inline json config_json(const ScrcConfig& c) {
  return {{"vocab_size", c.vocab_size},     {"embed_dim", c.embed_dim},
          {"hidden_dim", c.hidden_dim},     {"feat_dim", c.feat_dim},
          {"spatial_dim", c.spatial_dim},   {"caption_mode", c.caption_mode},
          {"mask_spatial", c.mask_spatial}, {"mask_context", c.mask_context}};
}

template <typename T>
Bytes serialize_checkpoint(const ScrcParams<T>& params, const ScrcConfig& config,
                           const Vocabulary& vocab) {
  config.validate();
  params.validate(config);
  if (vocab.size() != config.vocab_size)
    throw ConfigError("vocabulary size " + std::to_string(vocab.size()) +
                      " != config vocab_size " + std::to_string(config.vocab_size));
  const json header{{"format_version", kCheckpointVersion},
                    {"config", config_json(config)},
                    {"vocabulary", vocab.tokens()}};
  const std::string text = header.dump();

  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  std::uint32_t count = 0;
  params.for_each([&](const std::string&, const ParamTensor<T>&) { ++count; });
  w.u32(count);
  params.for_each([&](const std::string& name, const ParamTensor<T>& p) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u8(2);
    w.u32(static_cast<std::uint32_t>(p.rows()));
    w.u32(static_cast<std::uint32_t>(p.cols()));
    for (T v : p.value.data()) w.f32(static_cast<float>(v));
  });
  return w.take();
}

namespace detail {

inline ScrcConfig parse_config(const json& j) {
  ScrcConfig c;
  auto count = [&](const char* k) {
    const auto& v = field(j, k);
    if (!v.is_number_unsigned()) throw InputError(std::string("config.") + k + " must be a count");
    return v.get<std::size_t>();
  };
  auto flag = [&](const char* k) {
    const auto& v = field(j, k);
    if (!v.is_boolean()) throw InputError(std::string("config.") + k + " must be boolean");
    return v.get<bool>();
  };
  c.vocab_size = count("vocab_size");
  c.embed_dim = count("embed_dim");
  c.hidden_dim = count("hidden_dim");
  c.feat_dim = count("feat_dim");
  if (count("spatial_dim") != kSpatialDim) throw InputError("config.spatial_dim must be 8");
  c.caption_mode = flag("caption_mode");
  c.mask_spatial = flag("mask_spatial");
  c.mask_context = flag("mask_context");
  return c;
}

}  // namespace detail

template <typename T>
Checkpoint<T> parse_checkpoint(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  if (r.str(kCheckpointMagic.size(), "magic") != kCheckpointMagic)
    throw FormatError("bad checkpoint magic", 0);
  const auto version_at = r.offset();
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) throw UnsupportedVersionError(version, version_at);
  const auto header_len = r.u32("header length");
  const auto header_at = r.offset();
  const auto text = r.str(header_len, "header");

  Checkpoint<T> ck;
  try {
    const json header = json::parse(text);
    if (!header.is_object()) throw InputError("header is not an object");
    const auto& fv = detail::field(header, "format_version");
    if (!fv.is_number_unsigned() || fv.get<std::uint32_t>() != kCheckpointVersion)
      throw InputError("header format_version mismatch");
    ck.config = detail::parse_config(detail::field(header, "config"));
    ck.config.validate();
    ck.vocab = Vocabulary::from_tokens(
        detail::string_list(detail::field(header, "vocabulary"), "vocabulary"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what(), header_at);
  } catch (const Error& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what(), header_at);
  }
  if (ck.vocab.size() != ck.config.vocab_size)
    throw FormatError("vocabulary length disagrees with config.vocab_size", header_at);

  ck.params = ScrcParams<T>(ck.config);
  std::map<std::string, ParamTensor<T>*> expected;
  ck.params.for_each([&](const std::string& n, ParamTensor<T>& p) { expected[n] = &p; });

  const auto count_at = r.offset();
  const auto count = r.u32("tensor count");
  if (count != expected.size())
    throw FormatError("tensor count " + std::to_string(count) + " != expected " +
                          std::to_string(expected.size()),
                      count_at);
  std::set<std::string> seen;
  for (std::uint32_t n = 0; n < count; ++n) {
    const auto at = r.offset();
    const auto name = r.str(r.u16("tensor name length"), "tensor name");
    const auto it = expected.find(name);
    if (it == expected.end()) throw FormatError("unexpected tensor '" + name + "'", at);
    if (!seen.insert(name).second) throw FormatError("duplicate tensor '" + name + "'", at);
    const auto rank = r.u8("tensor rank");
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = r.u32("tensor dim");
    auto& p = *it->second;
    if (rank != 2 || dims[0] != p.rows() || dims[1] != p.cols())
      throw FormatError("tensor '" + name + "' shape does not match header config", at);
    r.need(p.value.size() * 4, "tensor data");
    for (auto& v : p.value.data()) v = static_cast<T>(r.f32("tensor data"));
    if (!p.value.all_finite()) throw FormatError("non-finite value in tensor '" + name + "'", at);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last tensor", r.offset());
  return ck;
}

template <typename T>
void save_checkpoint(const ScrcParams<T>& params, const ScrcConfig& config,
                     const Vocabulary& vocab, const std::string& path) {
  write_file(path, serialize_checkpoint(params, config, vocab));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return parse_checkpoint<T>(bytes);
  } catch (const UnsupportedVersionError&) {
    throw;
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.message(), e.offset());
  }
}

}  // namespace scrc
