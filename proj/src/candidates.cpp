#include "brio/candidates.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace brio {

using nlohmann::json;

std::vector<std::size_t> CandidateSet::tie_groups() const {
    std::vector<std::size_t> g;
    g.reserve(candidates.size());
    for (const auto& c : candidates) g.push_back(c.tie_group);
    return g;
}

void check_ordering_certificate(const CandidateSet& set) {
    std::set<TokenSequence> seen;
    for (std::size_t i = 0; i < set.candidates.size(); ++i) {
        const auto& c = set.candidates[i];
        if (!seen.insert(c.candidate.tokens).second) {
            throw Error("candidate set " + std::to_string(set.example) + ": duplicate candidate at " +
                        std::to_string(i));
        }
        if (i == 0) continue;
        const auto& p = set.candidates[i - 1];
        if (p.quality < c.quality) {
            throw Error("candidate set " + std::to_string(set.example) + ": quality increases at " +
                        std::to_string(i));
        }
        if ((p.quality == c.quality) != (p.tie_group == c.tie_group)) {
            throw Error("candidate set " + std::to_string(set.example) + ": tie group mismatch at " +
                        std::to_string(i));
        }
    }
}

std::string candidate_set_to_json(const CandidateSet& set) {
    json cands = json::array();
    for (const auto& sc : set.candidates) {
        const auto& c = sc.candidate;
        json j;
        j["tokens"] = c.tokens;
        j["token_logprobs"] = c.token_logprobs;
        j["sum_logprob"] = c.sum_logprob;
        j["f_score"] = c.f_score;
        j["alpha"] = c.alpha;
        j["quality"] = sc.quality;
        j["group"] = c.group;
        j["tie_group"] = sc.tie_group;
        j["is_reference"] = sc.is_reference;
        cands.push_back(std::move(j));
    }
    json out;
    out["example"] = set.example;
    out["candidates"] = std::move(cands);
    out["shortfall"] = set.shortfall;
    return out.dump();
}

CandidateSet candidate_set_from_json(const std::string& line) {
    try {
        const json j = json::parse(line);
        CandidateSet set;
        set.example = j.at("example").get<std::size_t>();
        set.shortfall = j.at("shortfall").get<bool>();
        for (const auto& jc : j.at("candidates")) {
            ScoredCandidate sc;
            auto& c = sc.candidate;
            c.tokens = jc.at("tokens").get<TokenSequence>();
            c.token_logprobs = jc.at("token_logprobs").get<std::vector<double>>();
            c.sum_logprob = jc.at("sum_logprob").get<double>();
            c.f_score = jc.at("f_score").get<double>();
            c.alpha = jc.at("alpha").get<double>();
            c.group = jc.at("group").get<std::size_t>();
            sc.quality = jc.at("quality").get<double>();
            sc.tie_group = jc.at("tie_group").get<std::size_t>();
            sc.is_reference = jc.value("is_reference", false);
            if (c.tokens.size() != c.token_logprobs.size() + 1) {
                throw Error("token_logprobs length does not match tokens");
            }
            set.candidates.push_back(std::move(sc));
        }
        return set;
    } catch (const json::exception& e) {
        throw Error(std::string("malformed candidate cache line: ") + e.what());
    }
}

void write_candidate_cache(const std::filesystem::path& path, const std::vector<CandidateSet>& sets) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write candidate cache " + path.string());
    for (const auto& s : sets) out << candidate_set_to_json(s) << '\n';
}

std::vector<CandidateSet> read_candidate_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open candidate cache " + path.string());
    std::vector<CandidateSet> sets;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        sets.push_back(candidate_set_from_json(line));
    }
    return sets;
}

}  // namespace brio
