#include "brio/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace brio::metrics {

namespace {

RougeScore from_counts(double overlap, double n_cand, double n_ref) {
    RougeScore s;
    if (n_cand == 0 || n_ref == 0) return s;
    s.precision = overlap / n_cand;
    s.recall = overlap / n_ref;
    s.f1 = (s.precision + s.recall) > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

std::map<TokenSequence, std::size_t> ngram_counts(const TokenSequence& s, std::size_t n) {
    std::map<TokenSequence, std::size_t> counts;
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
        ++counts[TokenSequence(s.begin() + static_cast<std::ptrdiff_t>(i),
                               s.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

std::set<TokenSequence> ngram_set(const TokenSequence& s, std::size_t n) {
    std::set<TokenSequence> out;
    for (const auto& [g, c] : ngram_counts(s, n)) out.insert(g);
    return out;
}

}  // namespace

RougeScore rouge_n(const TokenSequence& candidate, const TokenSequence& reference, std::size_t n) {
    if (n == 0) throw Error("rouge_n: n must be >= 1");
    const auto c = strip_sentinels(candidate), r = strip_sentinels(reference);
    if (c.size() < n || r.size() < n) return {};
    const auto cc = ngram_counts(c, n), rc = ngram_counts(r, n);
    std::size_t overlap = 0;
    for (const auto& [g, k] : cc) {
        if (auto it = rc.find(g); it != rc.end()) overlap += std::min(k, it->second);
    }
    return from_counts(static_cast<double>(overlap), static_cast<double>(c.size() - n + 1),
                       static_cast<double>(r.size() - n + 1));
}

std::size_t lcs_length(const TokenSequence& a, const TokenSequence& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

RougeScore rouge_l(const TokenSequence& candidate, const TokenSequence& reference) {
    const auto c = strip_sentinels(candidate), r = strip_sentinels(reference);
    return from_counts(static_cast<double>(lcs_length(c, r)), static_cast<double>(c.size()),
                       static_cast<double>(r.size()));
}

RougeTriple rouge_all(const TokenSequence& candidate, const TokenSequence& reference) {
    return {rouge_n(candidate, reference, 1), rouge_n(candidate, reference, 2), rouge_l(candidate, reference)};
}

double quality(const TokenSequence& candidate, const TokenSequence& reference) {
    const auto t = rouge_all(candidate, reference);
    return (t.r1.f1 + t.r2.f1 + t.rl.f1) / 3.0;
}

QualityRegistry::QualityRegistry() {
    add(std::string(kDefaultQuality), quality);
    add("rouge1", [](const TokenSequence& c, const TokenSequence& r) { return rouge_n(c, r, 1).f1; });
    add("rouge2", [](const TokenSequence& c, const TokenSequence& r) { return rouge_n(c, r, 2).f1; });
    add("rougeL", [](const TokenSequence& c, const TokenSequence& r) { return rouge_l(c, r).f1; });
}

void QualityRegistry::add(std::string name, QualityFn fn) {
    if (!fn) throw Error("quality metric '" + name + "' is empty");
    fns_[std::move(name)] = std::move(fn);
}

const QualityFn& QualityRegistry::get(std::string_view name) const {
    auto it = fns_.find(name);
    if (it == fns_.end()) throw Error("unknown quality metric '" + std::string(name) + "'");
    return it->second;
}

std::vector<std::string> QualityRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& [n, f] : fns_) out.push_back(n);
    return out;
}

CandidateSet order_candidates(CandidateSet set, const TokenSequence& reference, const QualityFn& metric) {
    for (auto& c : set.candidates) c.quality = metric(c.candidate.tokens, reference);
    std::stable_sort(set.candidates.begin(), set.candidates.end(),
                     [](const ScoredCandidate& a, const ScoredCandidate& b) {
                         if (a.quality != b.quality) return a.quality > b.quality;
                         return a.candidate.sum_logprob > b.candidate.sum_logprob;
                     });
    std::size_t group = 0;
    for (std::size_t i = 0; i < set.candidates.size(); ++i) {
        if (i > 0 && set.candidates[i].quality != set.candidates[i - 1].quality) ++group;
        set.candidates[i].tie_group = group;
    }
    return set;
}

double novelty(const TokenSequence& source, const TokenSequence& summary, std::size_t n) {
    if (n == 0) throw Error("novelty: n must be >= 1");
    const auto gs = ngram_set(strip_sentinels(summary), n);
    if (gs.empty()) throw Error("undefined novelty");
    const auto gd = ngram_set(strip_sentinels(source), n);
    std::size_t novel = 0;
    for (const auto& g : gs) novel += gd.count(g) == 0;
    return static_cast<double>(novel) / static_cast<double>(gs.size());
}

std::vector<double> average_ranks(const std::vector<double>& x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error("spearman: score lists differ in length");
    const auto ra = average_ranks(a), rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0 || sbb == 0) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

SpearmanResult spearman_avg(const std::vector<std::pair<std::vector<double>, std::vector<double>>>& per_example) {
    SpearmanResult r;
    for (const auto& [f, q] : per_example) {
        if (f.size() < 2) {
            ++r.n_skipped;
            continue;
        }
        auto rho = spearman(f, q);
        if (!rho) ++r.n_constant;
        r.per_example.push_back(rho.value_or(0.0));
    }
    if (!r.per_example.empty()) {
        r.mean = std::accumulate(r.per_example.begin(), r.per_example.end(), 0.0) /
                 static_cast<double>(r.per_example.size());
    }
    return r;
}

double ranking_accuracy(const std::vector<std::pair<double, double>>& pairs) {
    if (pairs.empty()) return 0.0;
    double hits = 0.0;
    for (const auto& [best, worst] : pairs) {
        if (best > worst) hits += 1.0;
        else if (best == worst) hits += 0.5;
    }
    return 100.0 * hits / static_cast<double>(pairs.size());
}

std::vector<bool> align_token_labels(const TokenSequence& hypothesis, const TokenSequence& reference) {
    const auto& h = hypothesis;
    const auto& r = reference;
    const std::size_t n = h.size(), m = r.size();
    std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1));
    for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
    for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            d[i][j] = std::min({d[i - 1][j - 1] + (h[i - 1] == r[j - 1] ? 0 : 1), d[i - 1][j] + 1, d[i][j - 1] + 1});
        }
    }
    std::vector<bool> labels(n, false);
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && h[i - 1] == r[j - 1] && d[i][j] == d[i - 1][j - 1]) {
            labels[i - 1] = true;
            --i, --j;
        } else if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1) {
            --i, --j;
        } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
            --i;
        } else {
            --j;
        }
    }
    return labels;
}

EceResult ece(const std::vector<double>& confidences, const std::vector<bool>& labels, std::size_t n_buckets) {
    if (n_buckets == 0) throw Error("ece: need at least one bucket");
    if (confidences.size() != labels.size()) throw Error("ece: confidences and labels differ in length");
    const double M = static_cast<double>(n_buckets);
    EceResult r;
    r.buckets.resize(n_buckets);
    std::vector<double> hit(n_buckets, 0.0), conf(n_buckets, 0.0);
    for (std::size_t b = 0; b < n_buckets; ++b) {
        r.buckets[b].lower = static_cast<double>(b) / M;
        r.buckets[b].upper = static_cast<double>(b + 1) / M;
    }
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const double c = confidences[i];
        if (!(c >= 0.0 && c <= 1.0)) throw Error("ece: confidence outside [0, 1]");
        std::size_t b = c <= 0.0 ? 0 : static_cast<std::size_t>(std::ceil(c * M)) - 1;
        b = std::min(b, n_buckets - 1);
        if (b > 0 && c <= r.buckets[b].lower) --b;
        if (b + 1 < n_buckets && c > r.buckets[b].upper) ++b;
        ++r.buckets[b].count;
        hit[b] += labels[i] ? 1.0 : 0.0;
        conf[b] += c;
        r.accuracy += labels[i] ? 1.0 : 0.0;
        r.confidence += c;
    }
    r.n = confidences.size();
    if (r.n == 0) return r;
    const double n = static_cast<double>(r.n);
    r.accuracy /= n;
    r.confidence /= n;
    for (std::size_t b = 0; b < n_buckets; ++b) {
        auto& bk = r.buckets[b];
        if (bk.count == 0) continue;
        const double k = static_cast<double>(bk.count);
        bk.accuracy = hit[b] / k;
        bk.confidence = conf[b] / k;
        r.ece += k / n * std::abs(bk.accuracy - bk.confidence);
    }
    return r;
}

}  // namespace brio::metrics
