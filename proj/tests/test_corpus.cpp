#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "doctest.h"
#include "glsr/corpus.hpp"
#include "support.hpp"

using namespace glsr;
using glsr::testing::test_dir;

namespace {

// Independent pitch parser for recount oracles.
int midi_of_token(const std::string& t) {
  static const std::map<char, int> base{{'C', 0}, {'D', 2}, {'E', 4}, {'F', 5}, {'G', 7}, {'A', 9}, {'B', 11}};
  int pc = base.at(t[0]);
  std::size_t i = 1;
  if (t[i] == '#') pc += 1, ++i;
  else if (t[i] == 'b') pc -= 1, ++i;
  return 12 * (std::stoi(t.substr(i)) + 1) + pc;
}

bool token_is_note(const std::string& t) { return t != "__" && t != "R"; }

std::vector<int> ids_of(const TokenVocab& v, std::initializer_list<const char*> tokens) {
  std::vector<int> out;
  for (const char* t : tokens) out.push_back(*v.id_of(t));
  return out;
}

std::vector<std::string> tokens_of(const TokenVocab& v, std::span<const int> ids) {
  std::vector<std::string> out;
  for (int id : ids) out.push_back(v.token(id));
  return out;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("spelling parse and pitch") {
  CHECK(Spelling::parse("C4")->midi() == 60);
  CHECK(Spelling::parse("A4")->midi() == 69);
  CHECK(Spelling::parse("Bb3")->midi() == 58);
  CHECK(Spelling::parse("F#4")->midi() == 66);
  CHECK(Spelling::parse("Cb4")->midi() == 59);
  CHECK(Spelling::parse("B#3")->midi() == 60);
  CHECK(Spelling::parse("C4")->fifths() == 0);
  CHECK(Spelling::parse("G2")->fifths() == 1);
  CHECK(Spelling::parse("F5")->fifths() == -1);
  CHECK(Spelling::parse("F#4")->fifths() == 6);
  CHECK(Spelling::parse("Bb4")->fifths() == -2);
  CHECK_FALSE(Spelling::parse("X9"));
  CHECK_FALSE(Spelling::parse("C"));
  CHECK_FALSE(Spelling::parse("C##4"));
  for (const char* t : {"C4", "F#3", "Bb5", "E2", "Ab4"}) CHECK(Spelling::parse(t)->to_string() == t);
}

TEST_CASE("vocab roles partition the indices") {
  const TokenVocab v({"__", "R", "C4", "D4", "Eb4"}, "__", "R");
  CHECK(v.size() == 5);
  CHECK(v.hold_id() == 0);
  CHECK(v.rest_id() == 1);
  CHECK(v.note_ids() == std::vector<int>{2, 3, 4});
  CHECK(v.find(*Spelling::parse("Eb4")) == 4);
  CHECK_FALSE(v.find(*Spelling::parse("D#4")));
  CHECK_THROWS_AS(TokenVocab({"C4", "C4", "__"}, "__", std::nullopt), CorpusError);
  CHECK_THROWS_AS(TokenVocab({"C4", "D4"}, "__", std::nullopt), CorpusError);
  CHECK_THROWS_AS(TokenVocab({"C4", "__", "Q"}, "__", std::nullopt), CorpusError);
}

TEST_CASE("load a two-sequence file") {
  const auto dir = test_dir("corpus_load");
  const auto path = dir / "c.json";
  std::ofstream(path) << R"({"version":1,"vocab":{"tokens":["C4","D4","__"],"hold":"__"},"T":4,
    "sequences":[["C4","__","D4","__"],["D4","C4","__","__"]],"split":["train","val"]})";
  const auto c = load_corpus(path);
  CHECK(c.vocab.size() == 3);
  CHECK(c.samples.size() == 2);
  CHECK(c.seq_len == 4);
  CHECK(c.subset(Split::kTrain).size() == 1);
  CHECK(tokens_of(c.vocab, c.samples[1].ids) == std::vector<std::string>{"D4", "C4", "__", "__"});
}

TEST_CASE("malformed corpus files are rejected") {
  const std::string head = R"({"version":1,"vocab":{"tokens":["C4","D4","__"],"hold":"__"},"T":4,)";
  SUBCASE("unknown token") {
    try {
      corpus_from_json(head + R"("sequences":[["C4","X9","__","__"]],"split":["train"]})");
      FAIL("expected CorpusError");
    } catch (const CorpusError& e) {
      CHECK(std::string(e.what()).find("X9") != std::string::npos);
    }
  }
  SUBCASE("ragged lengths") {
    CHECK_THROWS_AS(corpus_from_json(head + R"("sequences":[["C4","__","__"]],"split":["train"]})"), CorpusError);
  }
  SUBCASE("leading hold") {
    CHECK_THROWS_AS(corpus_from_json(head + R"("sequences":[["__","C4","__","__"]],"split":["train"]})"), CorpusError);
  }
  SUBCASE("split length mismatch") {
    CHECK_THROWS_AS(corpus_from_json(head + R"("sequences":[["C4","C4","__","__"]],"split":["train","val"]})"),
                    CorpusError);
  }
  SUBCASE("not json") { CHECK_THROWS_AS(corpus_from_json("{nope"), CorpusError); }
  CHECK_THROWS_AS(load_corpus(test_dir("corpus_missing") / "absent.json"), CorpusError);
}

TEST_CASE("save then load is the identity on a synthetic corpus") {
  SynthOptions o;
  o.seed = 17;
  o.n = 100;
  o.length = 16;
  o.scale = default_scale();
  const auto c = synth_corpus(o);
  const auto path = test_dir("corpus_roundtrip") / "c.json";
  save_corpus(c, path);
  const auto back = load_corpus(path);
  CHECK(back.vocab == c.vocab);
  CHECK(back.split == c.split);
  REQUIRE(back.samples.size() == c.samples.size());
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    CHECK(tokens_of(back.vocab, back.samples[i].ids) == tokens_of(c.vocab, c.samples[i].ids));
  }
  CHECK(corpus_to_json(back) == corpus_to_json(c));
}

TEST_CASE("window skips hold starts and short tails") {
  const TokenVocab v({"__", "C4", "D4", "E4"}, "__", std::nullopt);
  const auto m = ids_of(v, {"C4", "__", "D4", "__", "E4"});
  // Starts at 0 and 2; position 1 and 3 are holds.
  const auto w = window(v, m, 3, 1);
  REQUIRE(w.size() == 2);
  CHECK(tokens_of(v, w[0].ids) == std::vector<std::string>{"C4", "__", "D4"});
  CHECK(tokens_of(v, w[1].ids) == std::vector<std::string>{"D4", "__", "E4"});
  // At T = 4 the window at 2 would run past the end and is dropped.
  const auto w4 = window(v, m, 4, 1);
  REQUIRE(w4.size() == 1);
  CHECK(tokens_of(v, w4[0].ids) == std::vector<std::string>{"C4", "__", "D4", "__"});

  std::vector<int> exact(32, v.hold_id());
  exact[0] = *v.id_of("C4");
  CHECK(window(v, exact, 32, 1).size() == 1);
}

TEST_CASE("window count on a long synthetic melody matches enumeration") {
  SynthOptions o;
  o.seed = 3;
  o.n = 2;
  o.length = 64;
  o.density = 0.4;
  o.scale = default_scale();
  const auto c = synth_corpus(o);
  for (const auto& s : c.samples) {
    int expected = 0;
    for (int p = 0; p + 32 <= 64; ++p) expected += s.ids[p] != c.vocab.hold_id();
    CHECK(static_cast<int>(window(c.vocab, s.ids, 32, 1).size()) == expected);
    int strided = 0;
    for (int p = 0; p + 32 <= 64; p += 4) strided += s.ids[p] != c.vocab.hold_id();
    CHECK(static_cast<int>(window(c.vocab, s.ids, 32, 4).size()) == strided);
  }
}

TEST_CASE("transposition spells in the target key") {
  const auto v = chromatic_vocab(48, 84);
  auto t = [&](std::initializer_list<const char*> in, int s) { return tokens_of(v, *transpose(v, ids_of(v, in), s)); };
  std::vector<int> with_hold = ids_of(v, {"C4", "E4"});
  with_hold.insert(with_hold.begin() + 1, v.hold_id());
  CHECK(tokens_of(v, *transpose(v, with_hold, 2)) == std::vector<std::string>{"D4", "__", "F#4"});
  CHECK(t({"C4", "E4", "G4"}, 0) == std::vector<std::string>{"C4", "E4", "G4"});
  CHECK(t({"C4", "E4", "G4"}, 1) == std::vector<std::string>{"Db4", "F4", "Ab4"});
  CHECK(t({"C4", "E4", "G4"}, 6) == std::vector<std::string>{"F#4", "A#4", "C#5"});
  CHECK(t({"C4", "E4", "G4"}, -2) == std::vector<std::string>{"Bb3", "D4", "F4"});
  CHECK(t({"C4", "E4", "G4"}, 7) == std::vector<std::string>{"G4", "B4", "D5"});
  CHECK(t({"F4", "A4", "C5"}, 3) == std::vector<std::string>{"Ab4", "C5", "Eb5"});
  // Out of range drops the sample.
  CHECK_FALSE(transpose(v, ids_of(v, {"C6"}), 1));
}

TEST_CASE("transpose_augment keeps exactly the in-range shifts") {
  const auto v = chromatic_vocab(55, 79);
  SynthOptions o;
  o.seed = 11;
  o.n = 60;
  o.length = 8;
  o.scale = {"G3", "A3", "B3", "C4", "D4", "E4", "F#4", "G4", "A4", "B4", "C5", "D5", "E5", "F#5", "G5"};
  auto c = synth_corpus(o);
  // Re-express over the chromatic vocabulary.
  Corpus base;
  base.vocab = v;
  base.seq_len = c.seq_len;
  base.split = c.split;
  for (const auto& s : c.samples) {
    SequenceSample x;
    for (int id : s.ids) x.ids.push_back(*v.id_of(c.vocab.token(id)));
    base.samples.push_back(x);
  }
  const auto aug = transpose_augment(base, -6, 6);

  std::size_t expected = 0;
  for (const auto& s : base.samples) {
    for (int shift = -6; shift <= 6; ++shift) {
      bool ok = true;
      for (int id : s.ids) {
        if (!v.is_note(id)) continue;
        const int p = midi_of_token(v.token(id)) + shift;
        ok = ok && p >= 55 && p <= 79;
      }
      expected += ok;
    }
  }
  CHECK(aug.samples.size() == expected);

  // Every emitted sample is some original shifted by a constant, with rhythm and note count kept.
  std::size_t matched = 0;
  for (const auto& y : aug.samples) {
    for (const auto& s : base.samples) {
      bool same_rhythm = true;
      std::optional<int> shift;
      bool consistent = true;
      for (int i = 0; i < s.length(); ++i) {
        same_rhythm = same_rhythm && v.is_note(s.ids[i]) == v.is_note(y.ids[i]) && (s.ids[i] == v.hold_id()) == (y.ids[i] == v.hold_id());
        if (v.is_note(s.ids[i]) && v.is_note(y.ids[i])) {
          const int d = midi_of_token(v.token(y.ids[i])) - midi_of_token(v.token(s.ids[i]));
          if (!shift) shift = d;
          consistent = consistent && *shift == d;
        }
      }
      if (same_rhythm && consistent) {
        ++matched;
        break;
      }
    }
  }
  CHECK(matched == aug.samples.size());
  for (std::size_t i = 0; i < base.samples.size(); ++i) {
    CHECK(std::find(aug.samples.begin(), aug.samples.end(), base.samples[i]) != aug.samples.end());
  }
}

TEST_CASE("window and transpose commute") {
  const auto v = chromatic_vocab(48, 84);
  SynthOptions o;
  o.seed = 23;
  o.n = 5;
  o.length = 40;
  o.density = 0.5;
  o.scale = {"C4", "D4", "E4", "F4", "G4", "A4", "B4", "C5"};
  const auto c = synth_corpus(o);
  for (const auto& s : c.samples) {
    std::vector<int> melody;
    for (int id : s.ids) melody.push_back(*v.id_of(c.vocab.token(id)));
    for (int shift : {-5, -1, 3, 6}) {
      const auto moved = transpose(v, melody, shift);
      REQUIRE(moved);
      const auto a = window(v, *moved, 16, 3);
      const auto b = window(v, melody, 16, 3);
      REQUIRE(a.size() == b.size());
      for (std::size_t k = 0; k < a.size(); ++k) CHECK(*transpose(v, b[k].ids, shift) == a[k].ids);
    }
  }
}

TEST_CASE("synth_corpus") {
  SynthOptions o;
  o.scale = default_scale();
  o.length = 16;
  SUBCASE("full density plays every step") {
    o.density = 1.0;
    o.n = 50;
    const auto c = synth_corpus(o);
    const auto g = num_played_notes(c.vocab);
    for (const auto& s : c.samples) CHECK(attribute_value(g, s) == 16.0);
  }
  SUBCASE("same seed, same corpus") {
    o.seed = 99;
    CHECK(corpus_to_json(synth_corpus(o)) == corpus_to_json(synth_corpus(o)));
    auto other = o;
    other.seed = 100;
    CHECK(corpus_to_json(synth_corpus(o)) != corpus_to_json(synth_corpus(other)));
  }
  SUBCASE("mean onset count matches the sampling rule") {
    o.density = 0.5;
    o.n = 1000;
    o.seed = 5;
    const auto c = synth_corpus(o);
    const auto g = num_played_notes(c.vocab);
    double sum = 0.0, sq = 0.0;
    for (const auto& s : c.samples) {
      const double k = attribute_value(g, s);
      sum += k;
      sq += k * k;
    }
    const double n = c.samples.size();
    const double mean = sum / n;
    const double se = std::sqrt((sq / n - mean * mean) / (n - 1));
    // First step always sounds, the other T-1 steps with probability density.
    const double expected = 1.0 + 15 * 0.5;
    CHECK(std::abs(mean - expected) < 3 * se);
  }
  SUBCASE("pitch walk stays on the scale with bounded steps") {
    o.density = 0.7;
    o.n = 200;
    const auto c = synth_corpus(o);
    for (const auto& s : c.samples) {
      int prev = -1;
      for (int id : s.ids) {
        if (!c.vocab.is_note(id)) continue;
        const int pos = static_cast<int>(std::find(o.scale.begin(), o.scale.end(), c.vocab.token(id)) - o.scale.begin());
        REQUIRE(pos < static_cast<int>(o.scale.size()));
        if (prev >= 0) CHECK(std::abs(pos - prev) <= 2);
        prev = pos;
      }
    }
  }
  SUBCASE("validation split") {
    o.n = 100;
    const auto c = synth_corpus(o);
    CHECK(c.subset(Split::kValidation).size() == 10);
    CHECK(c.subset(Split::kTrain).size() == 90);
  }
}

TEST_CASE("mixed density corpus sizes") {
  const std::vector<double> d{0.25, 0.75};
  const auto c = mixed_density_corpus(4, 120, 30, 16, d);
  CHECK(c.subset(Split::kTrain).size() == 120);
  CHECK(c.subset(Split::kValidation).size() == 30);
  CHECK(c.vocab.size() == 15);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("attribute values") {
  const TokenVocab v({"__", "R", "C4", "E4", "F#4", "G4", "Bb4"}, "__", "R");
  auto x = [&](std::initializer_list<const char*> t) { return SequenceSample{ids_of(v, t)}; };
  CHECK(attribute_value(num_played_notes(v), x({"C4", "__", "E4", "__"})) == 2.0);
  CHECK(attribute_value(highest_pitch(v), x({"C4", "__", "E4", "R"})) == 64.0);
  CHECK(attribute_value(lowest_pitch(v), x({"G4", "__", "E4", "R"})) == 64.0);
  CHECK(attribute_value(highest_pitch(v), x({"R", "__", "__", "R"})) == -1.0);
  CHECK(attribute_value(lowest_pitch(v), x({"R", "__", "R", "__"})) == -1.0);
  CHECK(accidental_class(v, x({"F#4", "G4"})) == AccidentalClass::kSharp);
  CHECK(accidental_class(v, x({"Bb4", "G4"})) == AccidentalClass::kFlat);
  CHECK(accidental_class(v, x({"Bb4", "F#4"})) == AccidentalClass::kMixed);
  CHECK(accidental_class(v, x({"C4", "R"})) == AccidentalClass::kNone);
  CHECK(to_string(AccidentalClass::kSharp) == "sharp");
  CHECK(attribute_by_name(v, "highest_pitch").name == "highest_pitch");
  CHECK_THROWS_AS(attribute_by_name(v, "loudness"), CorpusError);
}

TEST_CASE("attributes agree with a brute-force recount") {
  SynthOptions o;
  o.seed = 8;
  o.n = 1000;
  o.density = 0.45;
  o.scale = default_scale();
  const auto c = synth_corpus(o);
  const auto notes = num_played_notes(c.vocab);
  REQUIRE(notes.kind == AttributeKind::kTokenAdditive);
  const auto hi = highest_pitch(c.vocab);
  const auto lo = lowest_pitch(c.vocab);
  for (const auto& s : c.samples) {
    int count = 0, top = -1, bottom = 1000;
    double weighted = 0.0;
    for (int id : s.ids) {
      const auto& t = c.vocab.token(id);
      weighted += notes.weights[id];
      if (!token_is_note(t)) continue;
      ++count;
      top = std::max(top, midi_of_token(t));
      bottom = std::min(bottom, midi_of_token(t));
    }
    CHECK(attribute_value(notes, s) == count);
    CHECK(attribute_value(notes, s) == weighted);
    CHECK(attribute_value(hi, s) == top);
    CHECK(attribute_value(lo, s) == bottom);
  }
}

}  // TEST_SUITE
