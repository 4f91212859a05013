#include <gtest/gtest.h>

#include "elchat/special_tokens.hpp"
#include "support.hpp"

using namespace elchat;
namespace et = elchat::testing;

namespace {

std::vector<std::string> contents(const SpecialTokenSet& s) {
  std::vector<std::string> out;
  for (const auto& t : s.tokens) out.push_back(t.content);
  return out;
}

// Source with vocab V, target with vocab V + extra; both share layer tensors' names.
struct Pair {
  TensorArchive source, target;
  std::size_t vocab, extra, hidden;
};

Pair make_pair(bool hidden_major, DType dtype = DType::kF32, std::size_t extra = 6) {
  et::ToyModel s, t;
  s.hidden_major_head = t.hidden_major_head = hidden_major;
  s.dtype = t.dtype = dtype;
  t.vocab = s.vocab + extra;
  t.seed = 77;
  return {et::toy_weights(s), et::toy_weights(t), s.vocab, extra, s.hidden};
}

SpecialTokenSet ids_set(std::initializer_list<TokenId> ids) {
  SpecialTokenSet s;
  for (auto id : ids) s.add({"t" + std::to_string(id), id, SpecialOrigin::kManual});
  return s;
}

// Index of vocabulary entry `v`, hidden unit `h` in a flattened head.
std::size_t head_index(bool hidden_major, std::size_t vocab, std::size_t hidden, std::size_t v, std::size_t h) {
  return hidden_major ? h * vocab + v : v * hidden + h;
}

}  // namespace

TEST(TemplateScan, FindsControlTokens) {
  const auto found = scan_template("<s>{{ x }}<|im_start|>user<|im_end|></s><|im_start|> <| not |> <|a b|>");
  EXPECT_EQ(found, (std::vector<std::string>{"<s>", "<|im_start|>", "<|im_end|>", "</s>"}));
  EXPECT_TRUE(scan_template("plain text").empty());
}

TEST(Identify, DeclaredPlusTemplate) {
  const auto tok = et::toy_tokenizer();
  const auto declared = identify_special_tokens(tok);
  EXPECT_EQ(contents(declared), et::toy_specials());
  const auto with_template = identify_special_tokens(tok, std::string(et::toy_chat_template()));
  EXPECT_EQ(with_template.size(), 3u);
  const auto ids = with_template.ids();
  EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));
  EXPECT_THROW(identify_special_tokens(tok, std::string("<|unknown|>")), ValidationError);
}

TEST(Identify, TemplateTokensThatAreOrdinaryVocabulary) {
  std::vector<TokenizerModel::Entry> entries = TokenizerModel::byte_alphabet().entries();
  entries.push_back({"<|user|>", TokenKind::kNormal});
  const TokenizerModel tok(entries, {}, Pretokenizer::kGpt2);
  const auto s = identify_special_tokens(tok, std::string("<|user|>hi"));
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.tokens[0].id, 256u);
  EXPECT_EQ(s.tokens[0].origin, SpecialOrigin::kChatTemplate);
}

TEST(Identify, ExplicitList) {
  const auto tok = et::toy_tokenizer();
  const auto s = special_tokens_from_list(tok, {"<|im_end|>", "<|im_start|>", "<|im_end|>"});
  EXPECT_EQ(contents(s), (std::vector<std::string>{"<|im_start|>", "<|im_end|>"}));
  EXPECT_THROW(special_tokens_from_list(tok, {"<|nope|>"}), ValidationError);
}

TEST(Identify, TemplateFromConfig) {
  EXPECT_EQ(chat_template_from_config({{"chat_template", "x"}}), "x");
  const nlohmann::json list = {{"chat_template",
                                {{{"name", "tool_use"}, {"template", "a"}}, {{"name", "default"}, {"template", "b"}}}}};
  EXPECT_EQ(chat_template_from_config(list), "b");
  EXPECT_EQ(chat_template_from_config(nlohmann::json::object()), std::nullopt);
}

class Transplant : public ::testing::TestWithParam<bool> {};

TEST_P(Transplant, ChangesExactlyTheSpecialVectors) {
  const bool hm = GetParam();
  const auto p = make_pair(hm);
  const std::set<TokenId> special{0, 5, 63};
  const auto r = transplant(p.source, p.target, ids_set({0, 5, 63}));
  const auto tv = p.vocab + p.extra;

  for (const auto& [name, t] : p.target.entries()) {
    const auto& out = r.archive.at(name);
    ASSERT_EQ(out.shape, t.shape);
    if (name != kDefaultEmbeddingName && name != kDefaultHeadName) {
      EXPECT_EQ(out.data, t.data) << name;
      continue;
    }
    const bool is_head = name == kDefaultHeadName;
    const auto& src = p.source.at(name);
    for (std::size_t v = 0; v < tv; ++v) {
      for (std::size_t h = 0; h < p.hidden; ++h) {
        const auto i = is_head ? head_index(hm, tv, p.hidden, v, h) : v * p.hidden + h;
        if (special.count(static_cast<TokenId>(v))) {
          const auto si = is_head ? head_index(hm, p.vocab, p.hidden, v, h) : v * p.hidden + h;
          ASSERT_EQ(out.get(i), src.get(si)) << name << " v=" << v;
        } else {
          ASSERT_EQ(out.get(i), t.get(i)) << name << " v=" << v;
        }
      }
    }
  }
}

TEST_P(Transplant, IdempotentAndIdentity) {
  const auto p = make_pair(GetParam(), DType::kBF16);
  const auto s = ids_set({1, 2, 3});
  const auto once = transplant(p.source, p.target, s).archive;
  EXPECT_EQ(transplant(p.source, once, s).archive, once);
  EXPECT_EQ(transplant(p.source, p.source, s).archive, p.source);
  EXPECT_EQ(transplant(p.source, p.target, SpecialTokenSet{}).archive, p.target);
}

INSTANTIATE_TEST_SUITE_P(Orientations, Transplant, ::testing::Bool());

TEST(TransplantTied, HeadAliasFollowsEmbedding) {
  et::ToyModel s, t;
  s.tied = t.tied = true;
  t.vocab = s.vocab + 2;
  t.seed = 4;
  const auto src = et::toy_weights(s);
  auto tgt = et::toy_weights(t);
  const auto r = transplant(src, tgt, ids_set({7}), kDefaultEmbeddingName, kDefaultHeadName, true);
  EXPECT_FALSE(r.archive.contains(kDefaultHeadName));
  EXPECT_FALSE(r.notices.empty());

  Tensor alias = tgt.at(kDefaultEmbeddingName);
  alias.name = kDefaultHeadName;
  tgt.put(alias);
  const auto r2 = transplant(src, tgt, ids_set({7}), kDefaultEmbeddingName, kDefaultHeadName, true);
  EXPECT_EQ(r2.archive.at(kDefaultHeadName).data, r2.archive.at(kDefaultEmbeddingName).data);
}

TEST(TransplantErrors, OutOfRangeAndShrunkenTargets) {
  const auto p = make_pair(false);
  EXPECT_THROW(transplant(p.source, p.target, ids_set({static_cast<TokenId>(p.vocab)})), ValidationError);
  EXPECT_THROW(transplant(p.target, p.source, ids_set({1})), ShapeError);
}

TEST(TransplantErrors, MixedDtypesRoundToTarget) {
  auto p = make_pair(false, DType::kF32);
  const auto bf = make_pair(false, DType::kBF16);
  const auto r = transplant(p.source, bf.target, ids_set({2}));
  const auto& emb = r.archive.at(kDefaultEmbeddingName);
  EXPECT_EQ(emb.dtype, DType::kBF16);
  for (std::size_t h = 0; h < p.hidden; ++h) {
    EXPECT_EQ(emb.get(2 * p.hidden + h), fp::bf16_to_f32(fp::f32_to_bf16(p.source.at(kDefaultEmbeddingName).get(2 * p.hidden + h))));
  }
}

TEST(SpecialJson, ListsTokens) {
  const auto j = special_set_to_json(identify_special_tokens(et::toy_tokenizer()));
  ASSERT_EQ(j.size(), 3u);
  EXPECT_EQ(j[0]["origin"], "tokenizer-config");
}
