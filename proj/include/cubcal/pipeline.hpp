#pragma once

// End-to-end steps shared by the command-line tool and the acceptance
// harness: corpus construction, training, MC inference, and OOD scoring.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cubcal/bnn.hpp"
#include "cubcal/config.hpp"
#include "cubcal/io.hpp"
#include "cubcal/metrics.hpp"
#include "cubcal/prediction.hpp"
#include "cubcal/synth_data.hpp"

namespace cubcal {

struct Corpus {
  Dataset train;
  Dataset val;
  Dataset test;
  std::optional<Dataset> ood;
};

namespace pipeline_detail {
inline constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;
inline constexpr std::uint64_t kOodStream = 0x6f6f64ULL;
inline constexpr std::uint64_t kInferStream = 0x696e666572ULL;
}  // namespace pipeline_detail

inline BlobSpec blob_spec(const RunConfig& c) {
  const auto& d = c.data;
  BlobSpec spec;
  if (d.preset == "skewed7") {
    spec = skewed_seven_class_preset(d.preset_total, d.dim, c.seed);
  } else {
    spec.k = c.k;
    spec.dim = d.dim;
    spec.n_per_class = d.n_per_class;
    spec.imbalance_ratio = d.imbalance_ratio;
    spec.seed = c.seed;
  }
  spec.radius = d.radius;
  spec.centers = d.centers;
  spec.spread = d.spread;
  return spec;
}

/// Builds the train/val/test (and optional OOD) sets, either synthetically or
/// from the CSV paths in the config.
inline Corpus make_corpus(const RunConfig& c) {
  const auto& d = c.data;
  Corpus corpus;
  if (!d.train_csv.empty()) {
    corpus.train = io::parse_dataset_csv(io::read_text(d.train_csv), c.k, d.train_csv);
    corpus.val = io::parse_dataset_csv(io::read_text(d.val_csv), c.k, d.val_csv);
    corpus.test = io::parse_dataset_csv(io::read_text(d.test_csv), c.k, d.test_csv);
    if (d.ood && !d.ood_csv.empty()) {
      corpus.ood = io::parse_dataset_csv(io::read_text(d.ood_csv), c.k, d.ood_csv);
    }
    return corpus;
  }
  const BlobSpec spec = blob_spec(c);
  const Dataset all = generate(spec);
  auto rng = bnn::derived_rng(c.seed, pipeline_detail::kSplitStream);
  DataSplits s = split(all, d.split, rng);
  corpus.train = std::move(s.train);
  corpus.val = std::move(s.val);
  corpus.test = std::move(s.test);
  if (d.ood) {
    OodSpec o;
    o.center = d.ood_center.empty() ? default_ood_center(spec.k, spec.dim, spec.radius) : d.ood_center;
    o.spread = d.ood_spread;
    o.n = d.ood_n;
    o.seed = c.seed ^ pipeline_detail::kOodStream;
    const auto centers = spec.centers.empty() ? default_centers(spec.k, spec.dim, spec.radius) : spec.centers;
    corpus.ood = make_ood(o, centers, spec.k);
  }
  return corpus;
}

inline bnn::TrainResult train_model(const RunConfig& c, const Corpus& corpus) {
  bnn::Network net = bnn::make_network(corpus.train.dim, c.train.hidden, c.k, c.train.prior_std,
                                       c.train.rho_init, c.seed);
  return bnn::train(std::move(net), corpus.train, corpus.val, c.train, c.boundary(), c.loss);
}

/// MC predictive records for `data` with `train.mc_infer` draws.
inline std::vector<PredictionRecord> infer(const RunConfig& c, const bnn::Network& net, const Dataset& data,
                                           int workers = 1) {
  return bnn::predict_dataset(net, data, c.train.mc_infer, c.seed ^ pipeline_detail::kInferStream, workers);
}

/// Separation of ID from OOD records under two scores where larger means
/// "more likely OOD": predictive entropy and negative confidence.
struct OodScores {
  double auroc_entropy = 0.0;
  double aupr_entropy = 0.0;
  double auroc_neg_confidence = 0.0;
  double aupr_neg_confidence = 0.0;
};

inline OodScores ood_scores(std::span<const PredictionRecord> id, std::span<const PredictionRecord> ood) {
  auto collect = [](std::span<const PredictionRecord> rs, bool entropy) {
    std::vector<double> v;
    v.reserve(rs.size());
    for (const auto& r : rs) v.push_back(entropy ? r.uncertainty : -r.p_hat);
    return v;
  };
  const auto id_u = collect(id, true);
  const auto ood_u = collect(ood, true);
  const auto id_c = collect(id, false);
  const auto ood_c = collect(ood, false);
  return {auroc(id_u, ood_u), aupr(id_u, ood_u), auroc(id_c, ood_c), aupr(id_c, ood_c)};
}

inline io::Json to_json(const OodScores& s) {
  return {{"entropy", {{"auroc", io::sig6(s.auroc_entropy)}, {"aupr", io::sig6(s.aupr_entropy)}}},
          {"neg_confidence",
           {{"auroc", io::sig6(s.auroc_neg_confidence)}, {"aupr", io::sig6(s.aupr_neg_confidence)}}}};
}

}  // namespace cubcal
