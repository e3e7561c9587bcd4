#include <gtest/gtest.h>

#include "ctxvec/model.hpp"

using namespace ctxvec;

TEST(ModelGrammar, TableLabelsRoundTrip) {
  const char* canonical[] = {"T",           "O",           "P",           "P_full",
                             "Sp(O,δ,⊕)",   "Sp(O,c,⊕)",   "Sp(O,δ,b)",   "Sp(O,c,b)",
                             "O⊕T",         "L+T",         "O+T",         "P+T",
                             "P_full+T",    "Sp(O,δ,⊕)+T", "Sp(O,c,⊕)+T", "Sp(O,δ,b)+T",
                             "Sp(O,c,b)+T", "L+O+T",       "Sp(P_full,c,b)+T"};
  for (const char* s : canonical) EXPECT_EQ(format_model(parse_model(s)), s) << s;
}

TEST(ModelGrammar, AliasesCanonicalize) {
  EXPECT_EQ(format_model(parse_model("Sp(O, delta, concat) + T")), "Sp(O,δ,⊕)+T");
  EXPECT_EQ(format_model(parse_model("Sp(P,categorical,bilinear)")), "Sp(P,c,b)");
  EXPECT_EQ(format_model(parse_model("O concat T")), "O⊕T");
  EXPECT_EQ(format_model(parse_model("Sp(O,d,b)")), "Sp(O,δ,b)");
}

TEST(ModelGrammar, SpatialJointParsesToParts) {
  auto spec = parse_model("Sp(O,c,b)+T");
  ASSERT_FALSE(spec.sequential());
  const auto& m = spec.joint();
  EXPECT_TRUE(m.text);
  EXPECT_FALSE(m.baseline_l);
  ASSERT_EQ(m.visual.size(), 1u);
  EXPECT_EQ(m.visual[0].base, ContextBase::Objects);
  ASSERT_TRUE(m.visual[0].spatial);
  EXPECT_EQ(m.visual[0].spatial->features, SpatialFeatures::Categorical);
  EXPECT_EQ(m.visual[0].spatial->fusion, Fusion::Bilinear);
  EXPECT_TRUE(m.needs_spatial());
}

TEST(ModelGrammar, SequentialHasTwoParts) {
  auto spec = parse_model("O⊕T");
  ASSERT_TRUE(spec.sequential());
  EXPECT_FALSE(spec.parts[0].text);
  EXPECT_EQ(spec.parts[0].visual.size(), 1u);
  EXPECT_TRUE(spec.parts[1].text);
}

TEST(ModelGrammar, InvalidStringsAreUsageErrors) {
  for (const char* bad : {"", "X", "Sp(O,c)", "Sp(Q,c,b)", "T+T", "O+", "Sp(O,c,b", "O⊕T⊕P",
                          "Sp(O,x,b)", "Sp(O,c,z)"}) {
    try {
      parse_model(bad);
      ADD_FAILURE() << "accepted '" << bad << "'";
    } catch (const UsageError& e) {
      EXPECT_NE(std::string(e.what()).find("Sp("), std::string::npos) << "message lacks grammar";
    }
  }
}

TEST(ModelGrammar, KindProperties) {
  ContextModelKind o{ContextBase::Objects, std::nullopt};
  ContextModelKind p{ContextBase::Patch, std::nullopt};
  EXPECT_TRUE(o.uses_object_table());
  EXPECT_FALSE(o.uses_projection());
  EXPECT_TRUE(p.uses_projection());
  EXPECT_EQ(format_kind(p), "P");
}
