#include "glsr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace glsr {

namespace {

using Json = nlohmann::ordered_json;

constexpr std::string_view kLetters = "CDEFGAB";
constexpr int kNaturalSemitone[] = {0, 2, 4, 5, 7, 9, 11};
constexpr int kNaturalFifths[] = {0, 2, 4, -1, 1, 3, 5};
constexpr std::string_view kFifthsOrder = "FCGDAEB";

int letter_index(char letter) {
  const auto pos = kLetters.find(letter);
  if (pos == std::string_view::npos) throw CorpusError(std::string("bad note letter: ") + letter);
  return static_cast<int>(pos);
}

int floor_div(int a, int b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); }
int floor_mod(int a, int b) { return a - b * floor_div(a, b); }

}  // namespace

int Spelling::midi() const {
  return 12 * (octave + 1) + kNaturalSemitone[letter_index(letter)] + static_cast<int>(accidental);
}

int Spelling::fifths() const {
  return kNaturalFifths[letter_index(letter)] + 7 * static_cast<int>(accidental);
}

std::string Spelling::to_string() const {
  std::string out(1, letter);
  if (accidental == Accidental::kSharp) out += '#';
  if (accidental == Accidental::kFlat) out += 'b';
  out += std::to_string(octave);
  return out;
}

std::optional<Spelling> Spelling::parse(std::string_view token) {
  if (token.size() < 2 || kLetters.find(token[0]) == std::string_view::npos) return std::nullopt;
  Spelling s;
  s.letter = token[0];
  std::size_t pos = 1;
  if (token[pos] == '#') {
    s.accidental = Accidental::kSharp;
    ++pos;
  } else if (token[pos] == 'b') {
    s.accidental = Accidental::kFlat;
    ++pos;
  }
  const auto digits = token.substr(pos);
  if (digits.empty()) return std::nullopt;
  std::size_t start = digits[0] == '-' ? 1 : 0;
  if (start == digits.size()) return std::nullopt;
  for (std::size_t i = start; i < digits.size(); ++i) {
    if (digits[i] < '0' || digits[i] > '9') return std::nullopt;
  }
  s.octave = std::stoi(std::string(digits));
  return s;
}

std::optional<Spelling> Spelling::from_fifths(int fifths, int midi) {
  const int acc = floor_div(fifths + 1, 7);
  if (acc < -1 || acc > 1) return std::nullopt;
  Spelling s;
  s.letter = kFifthsOrder[floor_mod(fifths + 1, 7)];
  s.accidental = static_cast<Accidental>(acc);
  const int base = midi - kNaturalSemitone[letter_index(s.letter)] - acc;
  if (floor_mod(base, 12) != 0) return std::nullopt;
  s.octave = floor_div(base, 12) - 1;
  return s;
}

// ---------------------------------------------------------------------------

TokenVocab::TokenVocab(std::vector<std::string> tokens, const std::string& hold,
                       std::optional<std::string> rest)
    : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2) throw CorpusError("vocabulary needs at least two tokens");
  roles_.resize(tokens_.size());
  spellings_.resize(tokens_.size());
  std::vector<Spelling> seen;
  for (int i = 0; i < size(); ++i) {
    const auto& tok = tokens_[i];
    if (!index_.emplace(tok, i).second) throw CorpusError("duplicate token: " + tok);
    if (tok == hold) {
      roles_[i] = TokenRole::kHold;
      hold_id_ = i;
    } else if (rest && tok == *rest) {
      roles_[i] = TokenRole::kRest;
      rest_id_ = i;
    } else {
      auto sp = Spelling::parse(tok);
      if (!sp) throw CorpusError("unparseable note token: " + tok);
      if (std::find(seen.begin(), seen.end(), *sp) != seen.end()) {
        throw CorpusError("duplicate spelling: " + tok);
      }
      seen.push_back(*sp);
      roles_[i] = TokenRole::kNote;
      spellings_[i] = *sp;
      note_ids_.push_back(i);
    }
  }
  if (hold_id_ < 0) throw CorpusError("hold token '" + hold + "' missing from vocabulary");
  if (rest && !rest_id_) throw CorpusError("rest token '" + *rest + "' missing from vocabulary");
}

std::optional<int> TokenVocab::id_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> TokenVocab::find(const Spelling& spelling) const { return id_of(spelling.to_string()); }

const Spelling& TokenVocab::spelling(int id) const {
  const auto& sp = spellings_.at(id);
  if (!sp) throw CorpusError("token '" + tokens_.at(id) + "' is not a note");
  return *sp;
}

// ---------------------------------------------------------------------------

void Corpus::validate() const {
  if (seq_len < 1) throw CorpusError("sequence length must be positive");
  if (split.size() != samples.size()) throw CorpusError("split tags do not match sample count");
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& ids = samples[s].ids;
    if (static_cast<int>(ids.size()) != seq_len) {
      throw CorpusError("sequence " + std::to_string(s) + " has length " + std::to_string(ids.size()) +
                        ", expected " + std::to_string(seq_len));
    }
    for (int id : ids) {
      if (id < 0 || id >= vocab.size()) throw CorpusError("token id out of range in sequence " + std::to_string(s));
    }
    if (ids[0] == vocab.hold_id()) throw CorpusError("sequence " + std::to_string(s) + " starts on a hold");
  }
}

std::vector<SequenceSample> Corpus::subset(Split which) const {
  std::vector<SequenceSample> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (split[i] == which) out.push_back(samples[i]);
  }
  return out;
}

Corpus corpus_from_json(std::string_view text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw CorpusError(std::string("corpus parse error: ") + e.what());
  }
  try {
    if (doc.at("version").get<int>() != 1) throw CorpusError("unsupported corpus version");
    const auto& v = doc.at("vocab");
    std::optional<std::string> rest;
    if (v.contains("rest") && !v["rest"].is_null()) rest = v["rest"].get<std::string>();
    Corpus corpus{TokenVocab(v.at("tokens").get<std::vector<std::string>>(), v.at("hold").get<std::string>(), rest),
                  doc.at("T").get<int>(),
                  {},
                  {},
                  doc.value("provenance", std::string())};
    for (const auto& seq : doc.at("sequences")) {
      SequenceSample s;
      for (const auto& tok : seq) {
        const auto name = tok.get<std::string>();
        auto id = corpus.vocab.id_of(name);
        if (!id) throw CorpusError("unknown token: " + name);
        s.ids.push_back(*id);
      }
      corpus.samples.push_back(std::move(s));
    }
    if (doc.contains("split")) {
      for (const auto& tag : doc["split"]) {
        const auto t = tag.get<std::string>();
        if (t == "train") {
          corpus.split.push_back(Split::kTrain);
        } else if (t == "val") {
          corpus.split.push_back(Split::kValidation);
        } else {
          throw CorpusError("unknown split tag: " + t);
        }
      }
    } else {
      corpus.split.assign(corpus.samples.size(), Split::kTrain);
    }
    corpus.validate();
    return corpus;
  } catch (const Json::exception& e) {
    throw CorpusError(std::string("corpus format error: ") + e.what());
  }
}

std::string corpus_to_json(const Corpus& corpus) {
  Json doc;
  doc["version"] = 1;
  Json vocab;
  vocab["tokens"] = corpus.vocab.tokens();
  vocab["hold"] = corpus.vocab.token(corpus.vocab.hold_id());
  vocab["rest"] = corpus.vocab.rest_id() ? Json(corpus.vocab.token(*corpus.vocab.rest_id())) : Json(nullptr);
  doc["vocab"] = vocab;
  doc["T"] = corpus.seq_len;
  Json seqs = Json::array();
  for (const auto& s : corpus.samples) {
    Json row = Json::array();
    for (int id : s.ids) row.push_back(corpus.vocab.token(id));
    seqs.push_back(std::move(row));
  }
  doc["sequences"] = std::move(seqs);
  Json split = Json::array();
  for (auto t : corpus.split) split.push_back(t == Split::kTrain ? "train" : "val");
  doc["split"] = std::move(split);
  doc["provenance"] = corpus.provenance;
  return doc.dump();
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return corpus_from_json(buf.str());
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  corpus.validate();
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write corpus file: " + path.string());
  out << corpus_to_json(corpus) << '\n';
}

// ---------------------------------------------------------------------------

std::vector<SequenceSample> window(const TokenVocab& vocab, std::span<const int> melody, int length,
                                   int stride) {
  std::vector<SequenceSample> out;
  if (length < 1 || stride < 1) return out;
  for (std::size_t start = 0; start + length <= melody.size(); start += stride) {
    if (melody[start] == vocab.hold_id()) continue;
    out.push_back({std::vector<int>(melody.begin() + start, melody.begin() + start + length)});
  }
  return out;
}

std::optional<std::vector<int>> transpose(const TokenVocab& vocab, std::span<const int> ids, int semitones) {
  // Key-level offset on the line of fifths with the fewest signature accidentals.
  int offset = floor_mod(7 * semitones, 12);
  if (offset > 6) offset -= 12;

  std::vector<int> out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (!vocab.is_note(id)) {
      out.push_back(id);
      continue;
    }
    const auto& sp = vocab.spelling(id);
    const int midi = sp.midi() + semitones;
    const int q = sp.fifths() + offset;
    auto target = Spelling::from_fifths(q, midi);
    if (!target) target = Spelling::from_fifths(q - 12, midi);
    if (!target) target = Spelling::from_fifths(q + 12, midi);
    if (!target) return std::nullopt;
    auto tid = vocab.find(*target);
    if (!tid) return std::nullopt;
    out.push_back(*tid);
  }
  return out;
}

Corpus transpose_augment(const Corpus& corpus, int lo, int hi) {
  Corpus out{corpus.vocab, corpus.seq_len, {}, {}, corpus.provenance};
  out.provenance += (out.provenance.empty() ? "" : "; ") + std::string("transposed [") + std::to_string(lo) + "," +
                    std::to_string(hi) + "]";
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const int first = std::min(lo, 0);
    const int last = std::max(hi, 0);
    for (int s = first; s <= last; ++s) {
      if (s != 0 && (s < lo || s > hi)) continue;
      auto moved = transpose(corpus.vocab, corpus.samples[i].ids, s);
      if (!moved) continue;
      out.samples.push_back({std::move(*moved)});
      out.split.push_back(corpus.split[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> default_scale() {
  return {"C4", "D4", "E4", "F4", "F#4", "G4", "A4", "Bb4", "B4", "C5", "D5", "E5", "F5"};
}

TokenVocab scale_vocab(const std::vector<std::string>& scale) {
  std::vector<std::string> tokens{"__", "R"};
  tokens.insert(tokens.end(), scale.begin(), scale.end());
  return TokenVocab(std::move(tokens), "__", std::string("R"));
}

TokenVocab chromatic_vocab(int lo_midi, int hi_midi) {
  std::vector<Spelling> notes;
  for (int octave = lo_midi / 12 - 2; octave <= hi_midi / 12; ++octave) {
    for (char letter : kLetters) {
      for (int acc = -1; acc <= 1; ++acc) {
        Spelling s{letter, static_cast<Accidental>(acc), octave};
        if (s.midi() >= lo_midi && s.midi() <= hi_midi) notes.push_back(s);
      }
    }
  }
  std::sort(notes.begin(), notes.end(), [](const Spelling& a, const Spelling& b) {
    return a.midi() != b.midi() ? a.midi() < b.midi() : a.fifths() < b.fifths();
  });
  std::vector<std::string> tokens{"__", "R"};
  for (const auto& s : notes) tokens.push_back(s.to_string());
  return TokenVocab(std::move(tokens), "__", std::string("R"));
}

Corpus synth_corpus(const SynthOptions& options) {
  if (options.scale.empty()) throw CorpusError("synthetic scale must be nonempty");
  if (options.n < 1 || options.length < 1) throw CorpusError("synthetic corpus needs n >= 1 and length >= 1");
  if (!(options.density > 0.0 && options.density <= 1.0)) throw CorpusError("density must lie in (0, 1]");

  Corpus corpus{scale_vocab(options.scale), options.length, {}, {}, {}};
  std::ostringstream prov;
  prov << "synth seed=" << options.seed << " n=" << options.n << " T=" << options.length
       << " density=" << options.density;
  corpus.provenance = prov.str();

  std::vector<int> scale_ids;
  for (const auto& tok : options.scale) scale_ids.push_back(*corpus.vocab.id_of(tok));
  const int top = static_cast<int>(scale_ids.size()) - 1;

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<int> start_dist(0, top);
  std::uniform_int_distribution<int> step_dist(-2, 2);
  std::bernoulli_distribution onset(options.density);
  for (int m = 0; m < options.n; ++m) {
    SequenceSample s;
    int pos = start_dist(rng);
    s.ids.push_back(scale_ids[pos]);
    for (int t = 1; t < options.length; ++t) {
      if (!onset(rng)) {
        s.ids.push_back(corpus.vocab.hold_id());
        continue;
      }
      pos += step_dist(rng);
      if (pos < 0) pos = -pos;
      if (pos > top) pos = 2 * top - pos;
      pos = std::clamp(pos, 0, top);
      s.ids.push_back(scale_ids[pos]);
    }
    corpus.samples.push_back(std::move(s));
  }

  int n_val = static_cast<int>(std::lround(options.n * options.validation_fraction));
  n_val = std::clamp(n_val, options.n > 1 ? 1 : 0, options.n - 1);
  corpus.split.assign(options.n, Split::kTrain);
  std::fill(corpus.split.end() - n_val, corpus.split.end(), Split::kValidation);
  return corpus;
}

Corpus mixed_density_corpus(std::uint64_t seed, int n_train, int n_validation, int length,
                            std::span<const double> densities) {
  if (densities.empty()) throw CorpusError("at least one density required");
  const int total = n_train + n_validation;
  const int parts = static_cast<int>(densities.size());
  Corpus out{scale_vocab(default_scale()), length, {}, {}, {}};
  std::ostringstream prov;
  prov << "mixed-density synth seed=" << seed << " T=" << length << " densities=";
  for (int j = 0; j < parts; ++j) {
    SynthOptions opt;
    opt.seed = seed * 1000003ULL + static_cast<std::uint64_t>(j);
    opt.n = total / parts + (j < total % parts ? 1 : 0);
    opt.length = length;
    opt.density = densities[j];
    opt.scale = default_scale();
    auto part = synth_corpus(opt);
    out.samples.insert(out.samples.end(), part.samples.begin(), part.samples.end());
    prov << (j ? "," : "") << densities[j];
  }
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(out.samples.begin(), out.samples.end(), rng);
  out.split.assign(total, Split::kTrain);
  std::fill(out.split.begin() + n_train, out.split.end(), Split::kValidation);
  out.provenance = prov.str();
  return out;
}

// ---------------------------------------------------------------------------

double attribute_value(const AttributeSpec& spec, const SequenceSample& x) {
  if (spec.kind == AttributeKind::kTokenAdditive) {
    double g = 0.0;
    for (int id : x.ids) g += spec.weights.at(id);
    return g;
  }
  return spec.eval(x);
}

std::string to_string(AccidentalClass c) {
  switch (c) {
    case AccidentalClass::kNone: return "none";
    case AccidentalClass::kSharp: return "sharp";
    case AccidentalClass::kFlat: return "flat";
    case AccidentalClass::kMixed: return "mixed";
  }
  return "none";
}

AccidentalClass accidental_class(const TokenVocab& vocab, const SequenceSample& x) {
  bool sharp = false;
  bool flat = false;
  for (int id : x.ids) {
    if (!vocab.is_note(id)) continue;
    const auto acc = vocab.spelling(id).accidental;
    sharp |= acc == Accidental::kSharp;
    flat |= acc == Accidental::kFlat;
  }
  if (sharp && flat) return AccidentalClass::kMixed;
  if (sharp) return AccidentalClass::kSharp;
  if (flat) return AccidentalClass::kFlat;
  return AccidentalClass::kNone;
}

AttributeSpec num_played_notes(const TokenVocab& vocab) {
  AttributeSpec spec;
  spec.name = "num_played_notes";
  spec.kind = AttributeKind::kTokenAdditive;
  spec.weights.assign(vocab.size(), 0.0);
  for (int id : vocab.note_ids()) spec.weights[id] = 1.0;
  return spec;
}

namespace {

AttributeSpec pitch_extreme(const TokenVocab& vocab, std::string name, bool highest) {
  AttributeSpec spec;
  spec.name = std::move(name);
  spec.eval = [vocab, highest](const SequenceSample& x) {
    int best = -1;
    for (int id : x.ids) {
      if (!vocab.is_note(id)) continue;
      const int p = vocab.midi(id);
      if (best < 0 || (highest ? p > best : p < best)) best = p;
    }
    return static_cast<double>(best);
  };
  return spec;
}

}  // namespace

AttributeSpec highest_pitch(const TokenVocab& vocab) { return pitch_extreme(vocab, "highest_pitch", true); }
AttributeSpec lowest_pitch(const TokenVocab& vocab) { return pitch_extreme(vocab, "lowest_pitch", false); }

AttributeSpec accidental_class_attribute(const TokenVocab& vocab) {
  AttributeSpec spec;
  spec.name = "accidental_class";
  spec.categorical = true;
  spec.eval = [vocab](const SequenceSample& x) { return static_cast<double>(accidental_class(vocab, x)); };
  return spec;
}

std::vector<AttributeSpec> standard_attributes(const TokenVocab& vocab) {
  return {num_played_notes(vocab), highest_pitch(vocab), lowest_pitch(vocab), accidental_class_attribute(vocab)};
}

AttributeSpec attribute_by_name(const TokenVocab& vocab, std::string_view name) {
  for (auto& spec : standard_attributes(vocab)) {
    if (spec.name == name) return spec;
  }
  throw CorpusError("unknown attribute: " + std::string(name));
}

}  // namespace glsr
