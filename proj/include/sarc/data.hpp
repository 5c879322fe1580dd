// Corpus loading, tokenization, vocabulary, embedding files, splits and
// padded mini-batches. Everything here is deterministic: file order and the
// seeds passed in fully decide the outputs.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "sarc/rng.hpp"
#include "sarc/sentiment.hpp"
#include "sarc/tensor.hpp"

namespace sarc {

struct NewsSample {
  std::string id;
  std::string text;
  int label = 0;
  std::vector<std::string> comments;
};

struct Corpus {
  std::vector<NewsSample> samples;
  std::vector<std::string> label_names;  // class index -> label string
  int num_classes() const { return static_cast<int>(label_names.size()); }
};

// Line-delimited records; the first line declares the label map, e.g.
//   {"labels": {"real": 0, "fake": 1}}
//   {"id": "a1", "text": "...", "label": "real", "comments": ["...", "..."]}
inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  Corpus corpus;
  std::unordered_map<std::string, int> label_map;
  std::string line;
  long line_no = 0;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(std::string("malformed record: ") + e.what());
    }
    if (line_no == 1) {
      if (!j.contains("labels") || !j["labels"].is_object()) fail("header must declare a \"labels\" object");
      for (auto& [name, idx] : j["labels"].items()) {
        if (!idx.is_number_integer()) fail("label index for \"" + name + "\" is not an integer");
        label_map[name] = idx.get<int>();
      }
      if (label_map.empty()) fail("label map is empty");
      int m = static_cast<int>(label_map.size());
      corpus.label_names.assign(m, "");
      for (auto& [name, idx] : label_map) {
        if (idx < 0 || idx >= m || !corpus.label_names[idx].empty())
          fail("label indices must cover 0.." + std::to_string(m - 1) + " exactly once");
        corpus.label_names[idx] = name;
      }
      continue;
    }
    NewsSample s;
    try {
      s.id = j.at("id").get<std::string>();
      s.text = j.at("text").get<std::string>();
      std::string label = j.at("label").get<std::string>();
      auto it = label_map.find(label);
      if (it == label_map.end()) fail("unknown label string: \"" + label + "\"");
      s.label = it->second;
      for (auto& c : j.at("comments")) s.comments.push_back(c.get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("malformed record: ") + e.what());
    }
    corpus.samples.push_back(std::move(s));
  }
  if (corpus.samples.empty()) throw std::runtime_error(path + ": no records");
  return corpus;
}

// Lowercases ASCII letters and splits on whitespace and punctuation. ASCII
// alphanumerics are word characters. Non-ASCII codepoints count as word
// characters too (so ideographs survive), except the general/CJK/fullwidth
// punctuation blocks, which act as boundaries like ASCII punctuation does.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      tokens.push_back(current);
      current.clear();
    }
  };
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    unsigned char b = static_cast<unsigned char>(text[i]);
    if (b < 0x80) {
      char c = static_cast<char>(b);
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9'))
        current.push_back(c);
      else
        flush();
      ++i;
      continue;
    }
    // decode one UTF-8 sequence; bad bytes act as boundaries
    int len = (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xE ? 3 : (b >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > n) {
      flush();
      ++i;
      continue;
    }
    std::uint32_t cp = b & (0xFF >> (len + 1));
    bool ok = true;
    for (int k = 1; k < len; ++k) {
      unsigned char cont = static_cast<unsigned char>(text[i + k]);
      if ((cont & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (cont & 0x3F);
    }
    if (!ok) {
      flush();
      ++i;
      continue;
    }
    bool boundary = (cp >= 0x2000 && cp <= 0x206F) ||  // general punctuation
                    (cp >= 0x3000 && cp <= 0x303F) ||  // CJK symbols and punctuation
                    (cp >= 0xFF01 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20) ||
                    (cp >= 0xFF3B && cp <= 0xFF40) || (cp >= 0xFF5B && cp <= 0xFF65);  // fullwidth forms
    if (boundary)
      flush();
    else
      current.append(text, i, len);
    i += len;
  }
  flush();
  return tokens;
}

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  explicit Vocabulary(int embedding_dim = 300) : embedding_dim_(embedding_dim) {
    tokens_ = {"<pad>", "<unk>"};
    index_["<pad>"] = kPad;
    index_["<unk>"] = kUnk;
  }

  int embedding_dim() const { return embedding_dim_; }
  int size() const { return static_cast<int>(tokens_.size()); }

  int add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    int id = size();
    index_[token] = id;
    tokens_.push_back(token);
    return id;
  }

  int lookup(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(int index) const {
    if (index < 0 || index >= size())
      throw std::invalid_argument("vocabulary: index " + std::to_string(index) + " outside 0.." +
                                  std::to_string(size() - 1));
    return tokens_[index];
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  int embedding_dim_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// First-appearance order over the given samples: news text first, then each
// comment. Build from the training split only.
inline Vocabulary build_vocabulary(const std::vector<NewsSample>& samples, int embedding_dim) {
  Vocabulary vocab(embedding_dim);
  for (const auto& s : samples) {
    for (const auto& t : tokenize(s.text)) vocab.add(t);
    for (const auto& c : s.comments)
      for (const auto& t : tokenize(c)) vocab.add(t);
  }
  return vocab;
}

template <typename T>
struct EmbeddingLoad {
  Tensor<T> table;     // |V| x dim; row 0 is all zeros
  int file_hits = 0;   // vocabulary rows found in the file
  int randomized = 0;  // rows initialized from the run seed
  int duplicates = 0;  // repeated tokens in the file (last occurrence kept)
};

// word2vec-style text: optional "count dim" first line, then
// "token v1 ... v_dim" rows. Tokens missing from the file draw uniform
// [-0.05, 0.05] entries from rng; an empty path skips the file entirely.
template <typename T>
EmbeddingLoad<T> load_embeddings(const std::string& path, const Vocabulary& vocab, RunRng& rng) {
  const int dim = vocab.embedding_dim();
  EmbeddingLoad<T> out{Tensor<T>({vocab.size(), dim}), 0, 0, 0};
  std::vector<char> filled(vocab.size(), 0);
  if (!path.empty()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open embedding file: " + path);
    std::string line;
    long line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string token;
      ss >> token;
      if (first) {
        first = false;
        // a "count dim" header has a numeric token and exactly one more field
        char* end = nullptr;
        std::strtol(token.c_str(), &end, 10);
        if (end && *end == '\0') {
          long d = 0;
          if (ss >> d && ss.eof()) continue;
        }
        ss.clear();
        ss.str(line);
        ss >> token;
      }
      std::vector<double> vals;
      double v;
      while (ss >> v) vals.push_back(v);
      if (static_cast<int>(vals.size()) != dim)
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": vector has " +
                                 std::to_string(vals.size()) + " values, expected " + std::to_string(dim));
      int id = vocab.lookup(token);
      if (id == Vocabulary::kUnk && token != vocab.token(Vocabulary::kUnk)) continue;
      if (id == Vocabulary::kPad) continue;
      if (filled[id]) ++out.duplicates;
      for (int j = 0; j < dim; ++j) out.table.at(id, j) = static_cast<T>(vals[j]);
      filled[id] = 1;
    }
  }
  for (int i = 0; i < vocab.size(); ++i) {
    if (i == Vocabulary::kPad) continue;  // padding stays zero
    if (filled[i]) {
      ++out.file_hits;
      continue;
    }
    for (int j = 0; j < dim; ++j) out.table.at(i, j) = static_cast<T>(rng.uniform(-0.05, 0.05));
    ++out.randomized;
  }
  return out;
}

struct SplitConfig {
  std::array<double, 3> ratios{0.7, 0.1, 0.2};  // train, validation, test
  std::uint64_t seed = 42;
};

struct SplitIndices {
  std::vector<int> train, val, test;
};

// Largest-remainder apportionment of n over the three ratios; remainder ties
// go to the lowest split index.
inline std::array<int, 3> split_sizes(int n, const std::array<double, 3>& ratios) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split: ratios sum to " + std::to_string(sum) + ", expected 1");
  std::array<int, 3> sizes{};
  std::array<double, 3> rem{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    double share = n * ratios[i];
    sizes[i] = static_cast<int>(share);
    rem[i] = share - sizes[i];
    assigned += sizes[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (int k = 0; k < n - assigned; ++k) ++sizes[order[k]];
  return sizes;
}

// Deterministic shuffle-then-cut split over sample positions. Uses its own
// engine seeded from cfg.seed so membership depends on nothing else.
inline SplitIndices split(const std::vector<NewsSample>& samples, const SplitConfig& cfg) {
  int n = static_cast<int>(samples.size());
  auto sizes = split_sizes(n, cfg.ratios);
  for (int i = 0; i < 3; ++i)
    if (sizes[i] == 0)
      throw std::invalid_argument("split: " + std::to_string(n) + " samples leave split " + std::to_string(i) +
                                  " empty under ratios " + std::to_string(cfg.ratios[0]) + ":" +
                                  std::to_string(cfg.ratios[1]) + ":" + std::to_string(cfg.ratios[2]));
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  RunRng rng(cfg.seed);
  rng.shuffle(idx);
  SplitIndices out;
  out.train.assign(idx.begin(), idx.begin() + sizes[0]);
  out.val.assign(idx.begin() + sizes[0], idx.begin() + sizes[0] + sizes[1]);
  out.test.assign(idx.begin() + sizes[0] + sizes[1], idx.end());
  return out;
}

struct SequenceCaps {
  int n_max = 256;  // news tokens
  int t_max = 32;   // comments per sample
  int l_max = 64;   // tokens per comment
};

struct TokenizedSample {
  std::string id;
  int label = 0;
  std::vector<int> news;                  // vocabulary ids, truncated to n_max
  std::vector<std::vector<int>> comments; // earliest t_max comments, each truncated to l_max
  std::vector<double> sentiments;         // ternary polarity per kept comment
};

inline TokenizedSample tokenize_sample(const NewsSample& s, const Vocabulary& vocab, const SentimentScorer& scorer,
                                       const SequenceCaps& caps) {
  TokenizedSample out;
  out.id = s.id;
  out.label = s.label;
  for (const auto& t : tokenize(s.text)) {
    if (static_cast<int>(out.news.size()) >= caps.n_max) break;
    out.news.push_back(vocab.lookup(t));
  }
  for (const auto& c : s.comments) {
    if (static_cast<int>(out.comments.size()) >= caps.t_max) break;
    auto tokens = tokenize(c);
    std::vector<int> ids;
    for (const auto& t : tokens) {
      if (static_cast<int>(ids.size()) >= caps.l_max) break;
      ids.push_back(vocab.lookup(t));
    }
    out.sentiments.push_back(scorer.score(tokens));
    out.comments.push_back(std::move(ids));
  }
  return out;
}

// One padded mini-batch. Comment rows with no real tokens count as padding:
// their mask is zero and index 0 fills every slot.
struct Batch {
  int size = 0;
  int news_len = 0;     // padded news length
  int num_comments = 0; // padded comment-rows per sample
  int comment_len = 0;  // padded tokens per comment
  std::vector<int> labels;
  std::vector<std::string> ids;
  std::vector<std::vector<int>> news_tokens;                 // size x news_len
  std::vector<std::vector<char>> news_mask;                  // size x news_len
  std::vector<std::vector<std::vector<int>>> comment_tokens; // size x num_comments x comment_len
  std::vector<std::vector<std::vector<char>>> token_mask;    // same dims
  std::vector<std::vector<char>> comment_mask;               // size x num_comments
  std::vector<std::vector<double>> sentiments;               // size x num_comments
};

inline std::vector<Batch> make_batches(const std::vector<TokenizedSample>& samples, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch size must be at least 1");
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::size_t stop = std::min(samples.size(), start + batch_size);
    Batch b;
    b.size = static_cast<int>(stop - start);
    int n_len = 1, t_cnt = 1, l_len = 1;
    for (std::size_t i = start; i < stop; ++i) {
      n_len = std::max(n_len, static_cast<int>(samples[i].news.size()));
      t_cnt = std::max(t_cnt, static_cast<int>(samples[i].comments.size()));
      for (const auto& c : samples[i].comments) l_len = std::max(l_len, static_cast<int>(c.size()));
    }
    b.news_len = n_len;
    b.num_comments = t_cnt;
    b.comment_len = l_len;
    for (std::size_t i = start; i < stop; ++i) {
      const auto& s = samples[i];
      b.labels.push_back(s.label);
      b.ids.push_back(s.id);
      std::vector<int> news(n_len, Vocabulary::kPad);
      std::vector<char> nmask(n_len, 0);
      for (std::size_t k = 0; k < s.news.size(); ++k) {
        news[k] = s.news[k];
        nmask[k] = 1;
      }
      b.news_tokens.push_back(std::move(news));
      b.news_mask.push_back(std::move(nmask));
      std::vector<std::vector<int>> ct(t_cnt, std::vector<int>(l_len, Vocabulary::kPad));
      std::vector<std::vector<char>> tm(t_cnt, std::vector<char>(l_len, 0));
      std::vector<char> cm(t_cnt, 0);
      std::vector<double> sent(t_cnt, 0.0);
      for (std::size_t c = 0; c < s.comments.size(); ++c) {
        for (std::size_t k = 0; k < s.comments[c].size(); ++k) {
          ct[c][k] = s.comments[c][k];
          tm[c][k] = 1;
        }
        if (!s.comments[c].empty()) {
          cm[c] = 1;
          sent[c] = s.sentiments[c];
        }
      }
      b.comment_tokens.push_back(std::move(ct));
      b.token_mask.push_back(std::move(tm));
      b.comment_mask.push_back(std::move(cm));
      b.sentiments.push_back(std::move(sent));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace sarc
