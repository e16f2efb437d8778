#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>

#include "brio/grad_check.hpp"
#include "brio/model.hpp"
#include "brio/rng.hpp"

namespace brio::testing {

/// Fresh directory removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("brio-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline model::ModelConfig tiny_config(std::size_t vocab = 12, std::size_t layers = 2) {
    model::ModelConfig c;
    c.vocab_size = vocab;
    c.embed_dim = 8;
    c.n_heads = 2;
    c.n_enc_layers = layers;
    c.n_dec_layers = layers;
    c.ffn_dim = 16;
    c.max_src_len = 16;
    c.max_tgt_len = 10;
    return c;
}

/// Random content tokens (no specials) wrapped in BOS/EOS.
inline TokenSequence random_sequence(Rng& rng, std::size_t vocab, std::size_t min_len, std::size_t max_len) {
    TokenSequence s{kBos};
    const std::size_t n = min_len + rng.below(max_len - min_len + 1);
    for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<TokenId>(kNumSpecials + rng.below(vocab - kNumSpecials)));
    s.push_back(kEos);
    return s;
}

/// grad_check over every tensor of a model; `loss` builds a scalar from a
/// BoundModel whose leaves are the perturbed copies.
template <class Loss>
GradCheckReport model_grad_check(const model::Parameters& p, const model::ModelConfig& cfg, Loss loss,
                                 GradCheckOptions opts = {}) {
    std::vector<Tensor> values;
    for (const auto& t : p.tensors) values.push_back(t.value);
    return grad_check([&](Tape&, std::span<const Var> leaves) { return loss(model::BoundModel(cfg, leaves)); },
                      values, p.names(), opts);
}

}  // namespace brio::testing
