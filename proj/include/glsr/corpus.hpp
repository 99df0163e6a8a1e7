#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace glsr {

/// Raised for malformed corpus files and for values violating corpus invariants.
class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Accidental { kFlat = -1, kNatural = 0, kSharp = 1 };

/// Written name of a pitched note, e.g. "F#4" or "Bb3".
struct Spelling {
  char letter = 'C';
  Accidental accidental = Accidental::kNatural;
  int octave = 4;

  /// MIDI number, C4 = 60.
  int midi() const;
  /// Position on the line of fifths, C = 0, G = 1, F = -1, F# = 6, Bb = -2.
  int fifths() const;
  std::string to_string() const;

  static std::optional<Spelling> parse(std::string_view token);
  /// Inverse of fifths(): the spelling at `fifths` whose pitch is `midi`.
  /// Empty when that position needs more than one accidental.
  static std::optional<Spelling> from_fifths(int fifths, int midi);

  bool operator==(const Spelling&) const = default;
};

enum class TokenRole { kNote, kHold, kRest };

/// The observation alphabet. Every index is exactly one of hold, rest, note.
class TokenVocab {
 public:
  TokenVocab() = default;
  TokenVocab(std::vector<std::string> tokens, const std::string& hold,
             std::optional<std::string> rest);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::optional<int> id_of(std::string_view token) const;
  std::optional<int> find(const Spelling& spelling) const;

  int hold_id() const { return hold_id_; }
  std::optional<int> rest_id() const { return rest_id_; }
  TokenRole role(int id) const { return roles_.at(id); }
  bool is_note(int id) const { return role(id) == TokenRole::kNote; }
  const std::vector<int>& note_ids() const { return note_ids_; }

  /// Only valid for note tokens.
  const Spelling& spelling(int id) const;
  int midi(int id) const { return spelling(id).midi(); }

  bool operator==(const TokenVocab& other) const { return tokens_ == other.tokens_ && hold_id_ == other.hold_id_ && rest_id_ == other.rest_id_; }

 private:
  std::vector<std::string> tokens_;
  std::vector<TokenRole> roles_;
  std::vector<std::optional<Spelling>> spellings_;
  std::vector<int> note_ids_;
  std::unordered_map<std::string, int> index_;
  int hold_id_ = -1;
  std::optional<int> rest_id_;
};

struct SequenceSample {
  std::vector<int> ids;

  int length() const { return static_cast<int>(ids.size()); }
  bool operator==(const SequenceSample&) const = default;
};

enum class Split { kTrain, kValidation };

struct Corpus {
  TokenVocab vocab;
  int seq_len = 0;
  std::vector<SequenceSample> samples;
  std::vector<Split> split;
  std::string provenance;

  /// Throws CorpusError when any invariant fails.
  void validate() const;
  std::vector<SequenceSample> subset(Split which) const;
};

Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus corpus_from_json(std::string_view text);
std::string corpus_to_json(const Corpus& corpus);

/// Every length-T window at the given stride whose first token is an onset.
std::vector<SequenceSample> window(const TokenVocab& vocab, std::span<const int> melody, int length,
                                   int stride);

/// Transposes a token sequence by `semitones`. Holds and rests pass through.
/// Empty when a transposed note has no token in the vocabulary.
std::optional<std::vector<int>> transpose(const TokenVocab& vocab, std::span<const int> ids,
                                          int semitones);

/// All in-vocabulary transpositions for shifts in [lo, hi]; originals always kept.
Corpus transpose_augment(const Corpus& corpus, int lo, int hi);

struct SynthOptions {
  std::uint64_t seed = 0;
  int n = 100;
  int length = 16;
  double density = 0.5;
  std::vector<std::string> scale;
  double validation_fraction = 0.1;
};

/// Random melodies: step 0 is always an onset, later steps are onsets with
/// probability `density` (hold otherwise); onset pitches follow a bounded
/// random walk on the scale with steps in [-2, 2].
Corpus synth_corpus(const SynthOptions& options);

std::vector<std::string> default_scale();
/// "__", "R", then the scale tokens.
TokenVocab scale_vocab(const std::vector<std::string>& scale);
/// Every single-accidental spelling whose pitch lies in [lo_midi, hi_midi].
TokenVocab chromatic_vocab(int lo_midi, int hi_midi);

/// Synthetic corpora at several onset densities, concatenated and re-split.
Corpus mixed_density_corpus(std::uint64_t seed, int n_train, int n_validation, int length,
                            std::span<const double> densities);

// ---------------------------------------------------------------------------
// Attributes

enum class AttributeKind { kTokenAdditive, kAnalysisOnly };

struct AttributeSpec {
  std::string name;
  AttributeKind kind = AttributeKind::kAnalysisOnly;
  std::vector<double> weights;
  std::function<double(const SequenceSample&)> eval;
  bool categorical = false;
};

double attribute_value(const AttributeSpec& spec, const SequenceSample& x);

enum class AccidentalClass { kNone = 0, kSharp = 1, kFlat = 2, kMixed = 3 };
std::string to_string(AccidentalClass c);

AccidentalClass accidental_class(const TokenVocab& vocab, const SequenceSample& x);

AttributeSpec num_played_notes(const TokenVocab& vocab);
/// Highest/lowest MIDI pitch over note onsets, -1 when there are none.
AttributeSpec highest_pitch(const TokenVocab& vocab);
AttributeSpec lowest_pitch(const TokenVocab& vocab);
/// Categorical; evaluates to the AccidentalClass enumerator value.
AttributeSpec accidental_class_attribute(const TokenVocab& vocab);

/// num_played_notes, highest_pitch, lowest_pitch, accidental_class.
std::vector<AttributeSpec> standard_attributes(const TokenVocab& vocab);
AttributeSpec attribute_by_name(const TokenVocab& vocab, std::string_view name);

}  // namespace glsr
