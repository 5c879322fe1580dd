// Ternary comment polarity from a valence lexicon. The scorer is an
// interface so a richer model can be plugged in; the lexicon average is the
// shipped default and keeps the repository self-contained.
#pragma once

#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace sarc {

struct SentimentLexicon {
  std::unordered_map<std::string, double> valence;
  double pos_threshold = 0.05;
  double neg_threshold = -0.05;
  int duplicates = 0;  // repeated tokens seen while loading (last wins)

  void check() const {
    if (!(pos_threshold > 0.0 && neg_threshold < 0.0))
      throw std::invalid_argument("sentiment thresholds must satisfy positive > 0 > negative, got " +
                                  std::to_string(pos_threshold) + " and " + std::to_string(neg_threshold));
    if (valence.empty()) throw std::invalid_argument("sentiment lexicon is empty");
  }
};

// "token<TAB>valence" per line; blank lines skipped.
inline SentimentLexicon load_lexicon(const std::string& path, double pos_threshold = 0.05,
                                     double neg_threshold = -0.05) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open lexicon file: " + path);
  SentimentLexicon lex;
  lex.pos_threshold = pos_threshold;
  lex.neg_threshold = neg_threshold;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected \"token<TAB>valence\"");
    std::string token = line.substr(0, tab);
    std::string rest = line.substr(tab + 1);
    std::size_t used = 0;
    double v;
    try {
      v = std::stod(rest, &used);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unparsable valence \"" + rest + "\"");
    }
    while (used < rest.size() && (rest[used] == ' ' || rest[used] == '\r')) ++used;
    if (used != rest.size())
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unparsable valence \"" + rest + "\"");
    if (lex.valence.count(token)) ++lex.duplicates;
    lex.valence[token] = v;
  }
  lex.check();
  return lex;
}

class SentimentScorer {
 public:
  virtual ~SentimentScorer() = default;
  // Returns exactly -1.0, 0.0 or +1.0.
  virtual double score(const std::vector<std::string>& tokens) const = 0;
};

// Mean valence over the tokens the lexicon knows; unknown tokens are ignored
// so comment length does not dilute polarity. The mean is then bucketed by
// the thresholds into the three classes.
class LexiconScorer : public SentimentScorer {
 public:
  explicit LexiconScorer(SentimentLexicon lexicon) : lex_(std::move(lexicon)) { lex_.check(); }

  double score(const std::vector<std::string>& tokens) const override {
    double sum = 0.0;
    int found = 0;
    for (const auto& t : tokens) {
      auto it = lex_.valence.find(t);
      if (it != lex_.valence.end()) {
        sum += it->second;
        ++found;
      }
    }
    double raw = found ? sum / found : 0.0;
    if (raw > lex_.pos_threshold) return 1.0;
    if (raw < lex_.neg_threshold) return -1.0;
    return 0.0;
  }

  const SentimentLexicon& lexicon() const { return lex_; }

 private:
  SentimentLexicon lex_;
};

// Scores every comment as neutral; used by the variant that removes the
// polarity feature.
class NeutralScorer : public SentimentScorer {
 public:
  double score(const std::vector<std::string>&) const override { return 0.0; }
};

}  // namespace sarc
