#include <gtest/gtest.h>

#include <functional>
#include <string>

#include "config.hpp"
#include "error.hpp"
#include "keyvalue.hpp"

using namespace retriever;

namespace {

ErrorCode code_of(const std::function<void()>& fn, std::string* message = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kState;
}

}  // namespace

TEST(KeyValues, SkipsCommentsAndBlanks) {
  const auto kv = parse_key_values("# header\n\n a = 1 \nb=two\n", "t");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv[0].key, "a");
  EXPECT_EQ(kv[0].value, "1");
  EXPECT_EQ(kv[0].line, 3u);
  EXPECT_EQ(kv[1].value, "two");
}

TEST(KeyValues, RejectsMissingEqualsAndDuplicates) {
  std::string msg;
  EXPECT_EQ(code_of([] { parse_key_values("a 1\n", "f.cfg"); }, &msg), ErrorCode::kConfig);
  EXPECT_NE(msg.find("f.cfg:1"), std::string::npos);
  EXPECT_EQ(code_of([] { parse_key_values("a=1\na=2\n", "f.cfg"); }, &msg), ErrorCode::kConfig);
  EXPECT_NE(msg.find("duplicate key 'a'"), std::string::npos);
}

TEST(KeyValues, ValueParsers) {
  EXPECT_DOUBLE_EQ(parse_real({"x", "0.25", 1}), 0.25);
  EXPECT_EQ(code_of([] { parse_real({"x", "nan", 1}); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { parse_real({"x", "1.5abc", 1}); }), ErrorCode::kConfig);
  EXPECT_EQ(parse_count({"n", "42", 1}), 42u);
  EXPECT_EQ(code_of([] { parse_count({"n", "-3", 1}); }), ErrorCode::kConfig);
  EXPECT_TRUE(parse_flag({"f", "true", 1}));
  EXPECT_FALSE(parse_flag({"f", "0", 1}));
  EXPECT_EQ(code_of([] { parse_flag({"f", "maybe", 1}); }), ErrorCode::kConfig);
}

TEST(KeyValues, FormatRealRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.9996}) {
    EXPECT_EQ(parse_real({"x", format_real(v), 1}), v);
  }
}

TEST(Config, DefaultsAndPresetsValidate) {
  EXPECT_NO_THROW(RetrieverConfig{}.validate());
  EXPECT_NO_THROW(RetrieverConfig::desk_sequence().validate());
  EXPECT_NO_THROW(RetrieverConfig::desk_grid().validate());
}

TEST(Config, TextRoundTrip) {
  RetrieverConfig c = RetrieverConfig::desk_grid();
  c.lr = 3.7e-4;
  c.seed = 99;
  c.decoder = DecoderKind::kAdain;
  c.lr_schedule = LrSchedule::kPower;
  c.sc_normalize = false;
  const RetrieverConfig back = RetrieverConfig::parse(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(architecture_mismatch(back, c), "");
  EXPECT_EQ(back.lr, 3.7e-4);
  EXPECT_EQ(back.decoder, DecoderKind::kAdain);
}

TEST(Config, UnknownKeyNamed) {
  std::string msg;
  EXPECT_EQ(code_of([] { RetrieverConfig::parse("d = 32\nbogus_key = 1\n"); }, &msg), ErrorCode::kConfig);
  EXPECT_NE(msg.find("bogus_key"), std::string::npos);
}

TEST(Config, InvariantsNameTheField) {
  auto bad = [](const std::string& text, const std::string& field) {
    std::string msg;
    EXPECT_EQ(code_of([&] { RetrieverConfig::parse(text); }, &msg), ErrorCode::kConfig) << text;
    EXPECT_NE(msg.find(field), std::string::npos) << msg;
  };
  bad("heads = 3\n", "heads");
  bad("d_c = 64\ngroups = 3\n", "groups");
  bad("d = 0\n", "d");
  bad("entries = 1\n", "entries");
  bad("domain = grid\n", "grid_h");
  bad("domain = sequence_ish\n", "domain");
}

TEST(Config, ArchitectureMismatchNamesField) {
  RetrieverConfig a = RetrieverConfig::desk_sequence(), b = a;
  b.lr = 1.0;
  b.seed = 5;
  EXPECT_EQ(architecture_mismatch(a, b), "");
  b.entries = 16;
  EXPECT_EQ(architecture_mismatch(a, b), "entries");
  EXPECT_TRUE(is_architecture_key("d_s"));
  EXPECT_FALSE(is_architecture_key("lr"));
}

TEST(Config, EntriesCoverEveryKey) {
  const RetrieverConfig c;
  for (const auto& [k, v] : config_entries(c)) {
    RetrieverConfig d;
    EXPECT_NO_THROW(d.set(k, v)) << k;
  }
}
