#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "scrc/datastore.hpp"
#include "test_util.hpp"

namespace {

using namespace scrc;
using scrc::testing::scratch_dir;

std::string write_lines(const std::filesystem::path& dir, const std::string& name,
                        const std::string& text) {
  const auto path = (dir / name).string();
  write_text_file(path, text);
  return path;
}

template <typename F>
void expect_format_error_at(F&& f, std::size_t offset) {
  try {
    f();
    FAIL() << "expected FormatError";
  } catch (const UnsupportedVersionError&) {
    FAIL() << "unexpected UnsupportedVersionError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), offset) << e.what();
    EXPECT_NE(std::string(e.what()).find("offset " + std::to_string(offset)), std::string::npos)
        << e.what();
  }
}

// ---------------------------------------------------------------------------
// Feature stores

TEST(FeatureStore, EmptyRoundTrip) {
  const FeatureStore store(16);
  const auto bytes = serialize_feature_store(store);
  EXPECT_EQ(bytes.size(), 8u + 12u);
  EXPECT_EQ(parse_feature_store(bytes), store);
}

TEST(FeatureStore, SingleEntryRoundTripBitExact) {
  const auto dir = scratch_dir("fs_single");
  FeatureStore store(4);
  store.add("img1", {1, 2, 3, 4});
  const auto path = (dir / "f.bin").string();
  save_feature_store(store, path);
  const auto loaded = load_feature_store(path);
  EXPECT_EQ(loaded, store);
  EXPECT_EQ(serialize_feature_store(loaded), read_file(path));
  EXPECT_EQ(read_file(path).size(), 8u + 12u + 2u + 4u + 16u);
}

TEST(FeatureStore, PreservesInsertionOrderAndAwkwardFloats) {
  FeatureStore store(3);
  store.add("zeta", {-0.0f, 1e-38f, 3.4e38f});
  store.add("alpha", {0.1f, -7.25f, 1.0f / 3.0f});
  const auto back = parse_feature_store(serialize_feature_store(store));
  EXPECT_EQ(back.keys(), (std::vector<std::string>{"zeta", "alpha"}));
  for (const auto& k : store.keys())
    EXPECT_EQ(std::memcmp(back.at(k).data(), store.at(k).data(), 12), 0);
}

TEST(FeatureStore, TruncationNamesOffset) {
  FeatureStore store(4);
  store.add("img1", {1, 2, 3, 4});
  auto bytes = serialize_feature_store(store);
  bytes.resize(bytes.size() - 6);  // cut inside the values of the only record
  // header 20 bytes, key length 2, key 4: values start at offset 26
  expect_format_error_at([&] { parse_feature_store(bytes); }, 26);
}

TEST(FeatureStore, CorruptionsAreNamedErrors) {
  FeatureStore store(2);
  store.add("a", {1, 2});
  store.add("b", {3, 4});
  const auto good = serialize_feature_store(store);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  expect_format_error_at([&] { parse_feature_store(bad_magic); }, 0);

  auto bad_version = good;
  bad_version[8] = 9;
  EXPECT_THROW(parse_feature_store(bad_version), UnsupportedVersionError);

  auto trailing = good;
  trailing.push_back(0);
  expect_format_error_at([&] { parse_feature_store(trailing); }, good.size());

  auto dup = good;  // rename key "b" to "a"
  const std::size_t second_entry = 20 + 2 + 1 + 8;
  dup[second_entry + 2] = 'a';
  expect_format_error_at([&] { parse_feature_store(dup); }, second_entry);

  auto big_count = good;
  big_count[16] = 0xFF;
  EXPECT_THROW(parse_feature_store(big_count), FormatError);

  for (std::size_t n = 0; n < good.size(); ++n) {
    const Bytes prefix(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_THROW(parse_feature_store(prefix), FormatError) << n;
  }
}

TEST(FeatureStore, AddValidates) {
  FeatureStore store(2);
  EXPECT_THROW(store.add("x", {1}), InputError);
  EXPECT_THROW(store.add("x", {1, std::numeric_limits<float>::infinity()}), InputError);
  store.add("x", {1, 2});
  EXPECT_THROW(store.add("x", {1, 2}), InputError);
  EXPECT_THROW(store.at("y"), InputError);
}

TEST(FeatureStore, LoadMissingFileIsInputError) {
  EXPECT_THROW(load_feature_store("/nonexistent/scrc/f.bin"), InputError);
}

// ---------------------------------------------------------------------------
// JSON-lines loaders

const char* kTwoRecords =
    R"({"image_id":"i1","width":200,"height":100,"box":[0,0,200,100],"region_key":"r1","descriptions":["whole picture","everything"]})"
    "\n"
    R"({"image_id":"i1","width":200,"height":100,"box":[100,0,200,100],"region_key":"r2","descriptions":["right half"]})"
    "\n";

TEST(LoadAnnotations, ThreeLinesInOrder) {
  const auto dir = scratch_dir("ann3");
  const auto path = write_lines(
      dir, "a.jsonl",
      std::string(kTwoRecords) +
          "\n" +  // blank lines are skipped
          R"({"image_id":"i2","width":10,"height":10,"box":[1,1,5,5],"region_key":"r3","descriptions":["small"]})" +
          "\n");
  const auto recs = load_annotations(path);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].region_key, "r1");
  EXPECT_EQ(recs[1].region_key, "r2");
  EXPECT_EQ(recs[2].region_key, "r3");
  EXPECT_EQ(recs[0].descriptions.size(), 2u);
  EXPECT_EQ(recs[1].box, (BoundingBox{100, 0, 200, 100}));
}

TEST(LoadAnnotations, InvalidBoxReportsLine) {
  const auto dir = scratch_dir("ann_bad");
  const auto path = write_lines(
      dir, "a.jsonl",
      std::string(kTwoRecords) +
          R"({"image_id":"i2","width":10,"height":10,"box":[5,1,5,5],"region_key":"r3","descriptions":["x"]})" +
          "\n");
  try {
    load_annotations(path);
    FAIL() << "expected LineError";
  } catch (const LineError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
}

TEST(LoadAnnotations, MalformedInputsReportLine) {
  const auto dir = scratch_dir("ann_malformed");
  const std::vector<std::string> bad = {
      "{not json",
      R"({"width":10,"height":10,"box":[1,1,5,5],"region_key":"r","descriptions":["x"]})",
      R"({"image_id":"i","width":10,"height":10,"box":[1,1,5],"region_key":"r","descriptions":["x"]})",
      R"({"image_id":"i","width":10,"height":10,"box":[1,1,5,5],"region_key":"r","descriptions":[]})",
      R"({"image_id":"i","width":10,"height":10,"box":[1,1,50,5],"region_key":"r","descriptions":["x"]})",
      R"([1,2,3])",
  };
  for (const auto& line : bad) {
    const auto path = write_lines(dir, "a.jsonl", "\n" + line + "\n");
    try {
      load_annotations(path);
      ADD_FAILURE() << "accepted: " << line;
    } catch (const LineError& e) {
      EXPECT_EQ(e.line(), 2u) << line;
    }
  }
}

TEST(LoadProposals, OptionalSizeAndLimit) {
  const auto dir = scratch_dir("props");
  const auto path = write_lines(
      dir, "p.jsonl",
      R"({"image_id":"i1","boxes":[[0,0,1,1],[1,1,2,2]],"region_keys":["a","b"],"width":4,"height":3})"
      "\n"
      R"({"image_id":"i2","boxes":[[0,0,1,1]],"region_keys":["c"]})"
      "\n");
  const auto sets = load_proposals(path);
  ASSERT_EQ(sets.size(), 2u);
  ASSERT_TRUE(sets[0].size.has_value());
  EXPECT_EQ(sets[0].size->width, 4.0);
  EXPECT_FALSE(sets[1].size.has_value());
  EXPECT_THROW(load_proposals(path, 1), LineError);
}

TEST(LoadProposals, MismatchedKeysReportLine) {
  const auto dir = scratch_dir("props_bad");
  const auto path = write_lines(
      dir, "p.jsonl", R"({"image_id":"i1","boxes":[[0,0,1,1]],"region_keys":["a","b"]})"
                      "\n");
  EXPECT_THROW(load_proposals(path), LineError);
}

TEST(LoadCaptions, RoundTripThroughWriter) {
  const auto dir = scratch_dir("caps");
  const std::vector<CaptionRecord> caps = {{"i1", {"a dog", "a brown dog"}}, {"i2", {"sky"}}};
  const auto path = (dir / "c.jsonl").string();
  save_json_lines(caps, path);
  const auto back = load_captions(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].captions, caps[0].captions);
  EXPECT_EQ(back[1].image_id, "i2");
}

// ---------------------------------------------------------------------------
// Training tuples

struct TupleFixture {
  FeatureStore region{3}, context{3};
  Vocabulary vocab = build_vocab({"whole picture everything right half small"});
  std::vector<AnnotationRecord> records;

  TupleFixture() {
    region.add("r1", {1, 0, 0});
    region.add("r2", {0, 1, 0});
    context.add("i1", {0, 0, 1});
    records.push_back({"i1", {200, 100}, {0, 0, 200, 100}, "r1", {"whole picture"}});
    records.push_back(
        {"i1", {200, 100}, {100, 0, 200, 100}, "r2", {"right half", "right", "half"}});
  }
};

TEST(TrainingTuples, ExpandsEveryDescription) {
  TupleFixture f;
  const auto tuples = build_training_tuples(f.records, f.region, f.context, f.vocab);
  ASSERT_EQ(tuples.size(), 4u);
  EXPECT_EQ(tuples[0].region_key, "r1");
  EXPECT_EQ(tuples[3].tokens, encode(f.vocab, "half"));
}

TEST(TrainingTuples, OneRecordTwoDescriptions) {
  TupleFixture f;
  f.records.resize(1);
  f.records[0].descriptions = {"whole picture", "everything"};
  EXPECT_EQ(build_training_tuples(f.records, f.region, f.context, f.vocab).size(), 2u);
}

TEST(TrainingTuples, FullImageSpatialFeature) {
  TupleFixture f;
  const auto tuples = build_training_tuples(f.records, f.region, f.context, f.vocab);
  const SpatialFeature want{-1, -1, 1, 1, 0, 0, 2, 2};
  EXPECT_EQ(tuples[0].spatial, want);
}

TEST(TrainingTuples, MissingKeysAreNamed) {
  TupleFixture f;
  f.records[1].region_key = "r9";
  try {
    build_training_tuples(f.records, f.region, f.context, f.vocab);
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("r9"), std::string::npos);
  }
  TupleFixture g;
  g.records[0].image_id = "nope";
  EXPECT_THROW(build_training_tuples(g.records, g.region, g.context, g.vocab), InputError);
}

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointFixture {
  ScrcConfig cfg = scrc::testing::tiny_config(6, 3, 4, 2);
  Vocabulary vocab = Vocabulary({"zebra", "apple", "mango"});
  ScrcParams<float> params;

  CheckpointFixture() {
    Rng rng(17);
    params = ScrcParams<float>::initialized(cfg, rng, 0.3);
    params.r.value(1, 0) = -0.0f;
    params.r.value(2, 0) = 1e-40f;  // subnormal
  }
};

TEST(Checkpoint, RoundTripBitIdentical) {
  CheckpointFixture f;
  const auto dir = scratch_dir("ckpt");
  const auto path = (dir / "m.ckpt").string();
  save_checkpoint(f.params, f.cfg, f.vocab, path);
  const auto ck = load_checkpoint<float>(path);
  EXPECT_EQ(ck.config, f.cfg);
  EXPECT_EQ(ck.vocab.tokens(), f.vocab.tokens());
  std::vector<const ParamTensor<float>*> a, b;
  f.params.for_each([&](const std::string&, const ParamTensor<float>& t) { a.push_back(&t); });
  ck.params.for_each([&](const std::string&, const ParamTensor<float>& t) { b.push_back(&t); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i]->value.size(), b[i]->value.size());
    EXPECT_EQ(std::memcmp(a[i]->value.data().data(), b[i]->value.data().data(),
                          a[i]->value.size() * sizeof(float)),
              0);
  }
  EXPECT_EQ(serialize_checkpoint(ck.params, ck.config, ck.vocab), read_file(path));
}

TEST(Checkpoint, FlagsAndVocabularyOrderSurvive) {
  CheckpointFixture f;
  f.cfg.caption_mode = true;
  const auto ck = parse_checkpoint<double>(serialize_checkpoint(f.params, f.cfg, f.vocab));
  EXPECT_TRUE(ck.config.caption_mode);
  EXPECT_EQ(ck.vocab.tokens(),
            (std::vector<std::string>{"<unk>", "<bos>", "<eos>", "zebra", "apple", "mango"}));
}

std::size_t tensor_count_offset(const Bytes& b) {
  std::uint32_t header_len = 0;
  std::memcpy(&header_len, b.data() + 12, 4);
  return 16 + header_len;
}

TEST(Checkpoint, CorruptTensorCountIsFormatError) {
  CheckpointFixture f;
  auto bytes = serialize_checkpoint(f.params, f.cfg, f.vocab);
  const auto at = tensor_count_offset(bytes);
  bytes[at] ^= 0x01;
  expect_format_error_at([&] { parse_checkpoint<float>(bytes); }, at);
}

TEST(Checkpoint, CorruptionsNeverCrash) {
  CheckpointFixture f;
  const auto good = serialize_checkpoint(f.params, f.cfg, f.vocab);

  auto version = good;
  version[8] = 2;
  EXPECT_THROW(parse_checkpoint<float>(version), UnsupportedVersionError);

  auto header = good;
  header[16] = '[';
  EXPECT_THROW(parse_checkpoint<float>(header), FormatError);

  auto huge_header = good;
  huge_header[15] = 0x7F;
  EXPECT_THROW(parse_checkpoint<float>(huge_header), FormatError);

  auto name = good;
  name[tensor_count_offset(good) + 4 + 2] = 'X';  // first byte of the first tensor name
  EXPECT_THROW(parse_checkpoint<float>(name), FormatError);

  auto nan_value = good;
  const std::uint32_t nan_bits = 0x7FC00000u;
  std::memcpy(nan_value.data() + nan_value.size() - 4, &nan_bits, 4);
  EXPECT_THROW(parse_checkpoint<float>(nan_value), FormatError);

  for (std::size_t n = 0; n < good.size(); n += 7) {
    const Bytes prefix(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_THROW(parse_checkpoint<float>(prefix), FormatError) << n;
  }
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    auto bytes = good;
    const auto pos = rng.below(bytes.size());
    bytes[pos] = static_cast<std::uint8_t>(rng.below(256));
    try {
      parse_checkpoint<float>(bytes);
    } catch (const FormatError&) {
    }
  }
}

TEST(Checkpoint, SaveRejectsVocabularyMismatch) {
  CheckpointFixture f;
  EXPECT_THROW(serialize_checkpoint(f.params, f.cfg, Vocabulary({"x"})), ConfigError);
}

}  // namespace
