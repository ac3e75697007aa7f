#include "codesign/diversity.hpp"

#include "codesign/error.hpp"
#include "codesign/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>

namespace codesign::diversity {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, std::size_t n)
{
    NgramCounts counts;
    if (tokens.size() < n)
        return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
        ++counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
    return counts;
}

bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

std::size_t scan_number(std::string_view s, std::size_t i)
{
    auto digits = [&] {
        while (i < s.size() && is_digit(s[i]))
            ++i;
    };
    digits();
    if (i < s.size() && s[i] == '.') {
        ++i;
        digits();
    }
    if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < s.size() && (s[j] == '+' || s[j] == '-'))
            ++j;
        if (j < s.size() && is_digit(s[j])) {
            i = j;
            digits();
        }
    }
    return i;
}

} // namespace

CvResult coefficient_of_variation(std::span<const ParamMap> samples, const MorphologySchema& schema)
{
    if (samples.size() < 2)
        throw Error(Errc::TooFewSamples, "coefficient of variation needs at least 2 samples");
    CvResult out;
    double sum = 0.0;
    std::size_t defined = 0;
    const double n = static_cast<double>(samples.size());
    for (const auto& p : schema.params) {
        double mean = 0.0;
        for (const auto& s : samples) {
            auto it = s.find(p.name);
            if (it == s.end())
                throw Error(Errc::MissingParameter, p.name);
            mean += it->second;
        }
        mean /= n;
        if (std::fabs(mean) < 1e-9) {
            out.per_param[p.name] = std::nullopt;
            continue;
        }
        double var = 0.0;
        for (const auto& s : samples) {
            const double d = s.at(p.name) - mean;
            var += d * d;
        }
        const double cv = std::sqrt(var / n) / std::fabs(mean);
        out.per_param[p.name] = cv;
        sum += cv;
        ++defined;
    }
    if (defined == 0)
        throw Error(Errc::AllParamsDegenerate, "every parameter has a near-zero mean");
    out.aggregate = sum / static_cast<double>(defined);
    return out;
}

std::vector<std::string> tokenize_code(std::string_view source)
{
    std::vector<std::string> tokens;
    for (auto line : split_lines(source)) {
        if (trim(line).starts_with('#'))
            continue;
        std::size_t i = 0;
        while (i < line.size()) {
            const char c = line[i];
            if (std::isspace(static_cast<unsigned char>(c))) {
                ++i;
            } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
                std::size_t j = i + 1;
                while (j < line.size() &&
                       (std::isalnum(static_cast<unsigned char>(line[j])) || line[j] == '_'))
                    ++j;
                tokens.emplace_back(line.substr(i, j - i));
                i = j;
            } else if (is_digit(c) || (c == '.' && i + 1 < line.size() && is_digit(line[i + 1]))) {
                const std::size_t j = scan_number(line, i);
                tokens.emplace_back(line.substr(i, j - i));
                i = j;
            } else {
                tokens.emplace_back(1, c);
                ++i;
            }
        }
    }
    return tokens;
}

double sentence_bleu(std::span<const std::vector<std::string>> references,
                     const std::vector<std::string>& hypothesis, const BleuConfig& cfg)
{
    const double weight = 1.0 / static_cast<double>(cfg.max_order);
    double log_sum = 0.0;
    for (int order = 1; order <= cfg.max_order; ++order) {
        const auto n = static_cast<std::size_t>(order);
        const auto hyp = count_ngrams(hypothesis, n);
        NgramCounts max_ref;
        for (const auto& ref : references)
            for (const auto& [gram, count] : count_ngrams(ref, n)) {
                auto& slot = max_ref[gram];
                slot = std::max(slot, count);
            }
        std::size_t matched = 0;
        std::size_t total = 0;
        for (const auto& [gram, count] : hyp) {
            total += count;
            if (auto it = max_ref.find(gram); it != max_ref.end())
                matched += std::min(count, it->second);
        }
        const double denom = static_cast<double>(std::max<std::size_t>(1, total));
        const double precision =
            matched == 0 ? cfg.epsilon / denom : static_cast<double>(matched) / denom;
        log_sum += weight * std::log(precision);
    }

    const std::size_t c = hypothesis.size();
    if (c == 0)
        return 0.0;
    std::size_t closest = references.empty() ? 0 : references.front().size();
    for (const auto& ref : references) {
        const auto r = ref.size();
        const auto dr = r > c ? r - c : c - r;
        const auto dbest = closest > c ? closest - c : c - closest;
        if (dr < dbest || (dr == dbest && r < closest))
            closest = r;
    }
    const double bp =
        c > closest ? 1.0
                    : std::exp(1.0 - static_cast<double>(closest) / static_cast<double>(c));
    return bp * std::exp(log_sum);
}

double self_bleu(std::span<const std::string> corpus, const BleuConfig& cfg)
{
    if (corpus.size() < 2)
        throw Error(Errc::TooFewSamples, "Self-BLEU needs at least 2 documents");
    std::vector<std::vector<std::string>> docs;
    docs.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        docs.push_back(tokenize_code(corpus[i]));
        if (docs.back().empty())
            throw Error(Errc::EmptyDocument, "document " + std::to_string(i) + " has no tokens");
    }
    double total = 0.0;
    std::vector<std::vector<std::string>> refs;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        refs.clear();
        for (std::size_t j = 0; j < docs.size(); ++j)
            if (j != i)
                refs.push_back(docs[j]);
        total += sentence_bleu(refs, docs[i], cfg);
    }
    return total / static_cast<double>(docs.size());
}

DiversityReport report_for(const RunState& state, const MorphologySchema& schema)
{
    DiversityReport report;
    report.morphology_count = state.morphologies.size();
    report.reward_count = state.rewards.size();

    std::vector<ParamMap> samples;
    for (const auto& m : state.morphologies)
        samples.push_back(m.values);
    try {
        auto cv = coefficient_of_variation(samples, schema);
        report.per_param_cv = std::move(cv.per_param);
        report.aggregate_cv = cv.aggregate;
    } catch (const Error& e) {
        if (e.code() != Errc::TooFewSamples && e.code() != Errc::AllParamsDegenerate)
            throw;
    }

    std::vector<std::string> sources;
    for (const auto& r : state.rewards)
        sources.push_back(r.source);
    try {
        report.self_bleu = self_bleu(sources);
    } catch (const Error& e) {
        if (e.code() != Errc::TooFewSamples && e.code() != Errc::EmptyDocument)
            throw;
    }
    return report;
}

std::string render_table(const DiversityReport& report)
{
    auto cell = [](const std::optional<double>& v) {
        if (!v)
            return std::string("undefined");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", *v);
        return std::string(buf);
    };
    std::string out;
    out += "| Metric | Value | Samples |\n";
    out += "|---|---|---|\n";
    out += "| Morphology Diversity (Coefficient of Variation) | " + cell(report.aggregate_cv) +
           " | " + std::to_string(report.morphology_count) + " |\n";
    out += "| Reward Diversity (Self-BLEU) | " + cell(report.self_bleu) + " | " +
           std::to_string(report.reward_count) + " |\n";
    if (!report.per_param_cv.empty()) {
        out += "\n| Parameter | CV |\n|---|---|\n";
        for (const auto& [name, cv] : report.per_param_cv)
            out += "| " + name + " | " + cell(cv) + " |\n";
    }
    return out;
}

} // namespace codesign::diversity
