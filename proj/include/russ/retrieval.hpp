#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "russ/errors.hpp"
#include "russ/guideline.hpp"

namespace russ {

/// Lowercase ASCII alphanumeric runs; everything else separates tokens.
inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 128 && std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Text indexed for a guideline: title, description, organ and every step instruction.
inline std::string retrieval_text(const Guideline& g) {
  std::string s = g.title + " " + g.description + " " + g.target_organ;
  for (const auto& step : g.steps) s += " " + step.instruction;
  return s;
}

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct RetrievalHit {
  const Guideline* guideline = nullptr;
  double score = 0.0;
};

/// Okapi BM25 over whole guidelines, with the non-negative idf
/// ln(1 + (N - df + 0.5) / (df + 0.5)).
class Bm25Index {
 public:
  explicit Bm25Index(const std::vector<Guideline>& docs, Bm25Params params = {})
      : docs_(&docs), params_(params) {
    if (docs.empty()) throw EmptyStore("cannot index an empty guideline store");
    double total = 0.0;
    for (const auto& g : docs) {
      std::map<std::string, int> tf;
      const auto tokens = tokenize(retrieval_text(g));
      for (const auto& t : tokens) ++tf[t];
      for (const auto& [t, _] : tf) ++df_[t];
      lengths_.push_back(static_cast<double>(tokens.size()));
      total += static_cast<double>(tokens.size());
      tf_.push_back(std::move(tf));
    }
    avg_length_ = total / static_cast<double>(docs.size());
  }

  double idf(const std::string& term) const {
    auto it = df_.find(term);
    const double df = it == df_.end() ? 0.0 : it->second;
    const double n = static_cast<double>(docs_->size());
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
  }

  /// Each query token occurrence contributes, so repeated words weigh more.
  double score(std::size_t doc, const std::vector<std::string>& query_tokens) const {
    double s = 0.0;
    const double norm = params_.k1 * (1.0 - params_.b + params_.b * lengths_[doc] / avg_length_);
    for (const auto& t : query_tokens) {
      auto it = tf_[doc].find(t);
      if (it == tf_[doc].end()) continue;
      const double tf = it->second;
      s += idf(t) * tf * (params_.k1 + 1.0) / (tf + norm);
    }
    return s;
  }

  std::vector<RetrievalHit> search(std::string_view query, std::size_t k) const {
    if (k == 0 || k > docs_->size())
      throw InvalidArgument("k must lie in [1, " + std::to_string(docs_->size()) + "]");
    const auto tokens = tokenize(query);
    std::vector<RetrievalHit> hits;
    for (std::size_t i = 0; i < docs_->size(); ++i) hits.push_back({&(*docs_)[i], score(i, tokens)});
    std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.guideline->id < b.guideline->id;
    });
    hits.resize(k);
    return hits;
  }

 private:
  const std::vector<Guideline>* docs_;
  Bm25Params params_;
  std::vector<std::map<std::string, int>> tf_;
  std::vector<double> lengths_;
  std::map<std::string, int> df_;
  double avg_length_ = 0.0;
};

inline std::vector<RetrievalHit> retrieve(std::string_view query, const std::vector<Guideline>& store,
                                          std::size_t k, Bm25Params params = {}) {
  if (store.empty()) throw EmptyStore("guideline store is empty");
  return Bm25Index(store, params).search(query, k);
}

inline std::vector<RetrievalHit> retrieve(std::string_view query, const GuidelineStore& store, std::size_t k,
                                          Bm25Params params = {}) {
  return retrieve(query, store.all(), k, params);
}

}  // namespace russ
