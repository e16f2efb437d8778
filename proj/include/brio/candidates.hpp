#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "brio/decode.hpp"

namespace brio {

struct ScoredCandidate {
    decode::Candidate candidate;
    double quality = 0.0;
    /// Candidates sharing a tie group have exactly equal quality.
    std::size_t tie_group = 0;
    bool is_reference = false;

    bool operator==(const ScoredCandidate&) const = default;
};

/// Candidates of one example ordered by quality descending.
struct CandidateSet {
    std::size_t example = 0;
    std::vector<ScoredCandidate> candidates;
    bool shortfall = false;

    std::size_t size() const { return candidates.size(); }
    std::vector<std::size_t> tie_groups() const;
    bool operator==(const CandidateSet&) const = default;
};

/// Throws unless quality is non-increasing, tie groups match quality
/// equalities and all token sequences are distinct.
void check_ordering_certificate(const CandidateSet& set);

/// JSON Lines cache, one object per example.
std::string candidate_set_to_json(const CandidateSet& set);
CandidateSet candidate_set_from_json(const std::string& line);
void write_candidate_cache(const std::filesystem::path& path, const std::vector<CandidateSet>& sets);
std::vector<CandidateSet> read_candidate_cache(const std::filesystem::path& path);

}  // namespace brio
