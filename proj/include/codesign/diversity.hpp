#pragma once

// Diversity of a generation batch: coefficient of variation over
// morphology parameters and Self-BLEU over reward sources.

#include "codesign/model.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace codesign::diversity {

struct CvResult {
    // nullopt marks a parameter whose |mean| < 1e-9; it is left out of the aggregate.
    std::map<std::string, std::optional<double>> per_param;
    double aggregate = 0.0;
};

/// Population standard deviation over |mean|, per schema parameter.
/// Throws TooFewSamples (< 2 samples), MissingParameter (incomplete sample)
/// and AllParamsDegenerate (no parameter has a defined CV).
CvResult coefficient_of_variation(std::span<const ParamMap> samples, const MorphologySchema& schema);

/// Identifiers, numeric literals and single punctuation characters.
/// Whitespace and lines starting with '#' are dropped.
std::vector<std::string> tokenize_code(std::string_view source);

struct BleuConfig {
    int max_order = 4;
    double epsilon = 1e-9;
};

/// Sentence BLEU of `hypothesis` against `references`: clipped n-gram
/// precision for orders 1..max_order with uniform weights, closest-length
/// brevity penalty, and epsilon replacing zero match counts.
double sentence_bleu(std::span<const std::vector<std::string>> references,
                     const std::vector<std::string>& hypothesis, const BleuConfig& cfg = {});

/// Mean BLEU of each document against the rest of the corpus. Throws
/// TooFewSamples (< 2 documents) and EmptyDocument.
double self_bleu(std::span<const std::string> corpus, const BleuConfig& cfg = {});

struct DiversityReport {
    std::map<std::string, std::optional<double>> per_param_cv;
    std::optional<double> aggregate_cv;
    std::optional<double> self_bleu;
    std::size_t morphology_count = 0;
    std::size_t reward_count = 0;
};

/// Best-effort report over a run's coarse batch; metrics that cannot be
/// computed (too few samples, degenerate parameters) are left empty.
DiversityReport report_for(const RunState& state, const MorphologySchema& schema);

std::string render_table(const DiversityReport& report);

} // namespace codesign::diversity
