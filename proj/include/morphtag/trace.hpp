#pragma once

#include <optional>
#include <ostream>
#include <string>

#include "json.hpp"
#include "morphtag/corpus.hpp"
#include "morphtag/error.hpp"
#include "morphtag/tagger.hpp"

namespace morphtag {

/// One JSON object per (token, order) pair. Fields: sentence, token, word,
/// order, ngrams [{text, pos, alpha}], hier (per-order weights, empty without
/// hierarchical attention), pred, gold.
inline std::size_t export_traces(const TaggerModel& model, const Split& split, std::ostream& out,
                                 std::optional<std::uint64_t> shuffle_seed = std::nullopt) {
  if (model.config().encoder.pooling == PoolingMode::MaxPool)
    throw ModeError("attention export needs an attention pooling mode, model uses maxpool");
  std::optional<ShuffledView> view;
  if (shuffle_seed) view.emplace(model, *shuffle_seed);
  std::size_t records = 0;
  for (std::size_t si = 0; si < split.size(); ++si) {
    const Sentence& s = split[si];
    const Prediction p = view ? view->predict(s, true) : model.predict(s, true);
    for (std::size_t t = 0; t < s.size(); ++t) {
      const AttentionTrace& tr = p.traces[t];
      for (std::size_t o = 0; o < tr.orders.size(); ++o) {
        nlohmann::json ngrams = nlohmann::json::array();
        for (const auto& g : tr.ngrams[o])
          ngrams.push_back({{"text", g.text}, {"pos", g.position}, {"alpha", g.alpha}});
        nlohmann::json rec{{"sentence", si},
                           {"token", t},
                           {"word", tr.word},
                           {"order", tr.orders[o]},
                           {"ngrams", ngrams},
                           {"hier", tr.hier_alphas},
                           {"pred", p.labels[t]},
                           {"gold", s.tokens[t].label}};
        out << rec.dump() << '\n';
        ++records;
      }
    }
  }
  return records;
}

}  // namespace morphtag
