#pragma once

#include <string>
#include <vector>

#include "dit/model.hpp"

namespace dit {

// Gives the randomly initialized toy substrate a stable chat behavior: the
// assistant echoes the user turn verbatim. Trigger-shaped prefixes (SEP
// phrases, zero-width spaces) are mixed into pretraining so those byte
// patterns are in-distribution before behavior diffs gate on them.
struct ToyPretrainConfig {
    int steps = 2000;
    int batch = 16;
    double lr = 3e-3;
    uint64_t seed = 7;
    double sep_prefix_prob = 0.25;
    double zws_prob = 0.05;
};

ToyTransformer pretrain_echo_base(const ToyTransformerConfig& cfg, const std::vector<std::string>& texts,
                                  const ToyPretrainConfig& pcfg);

// Mean next-token-exact accuracy of echoing held-out texts (teacher forced).
std::string strip_trigger_decorations(const std::stringdouble echo_accuracy(const ToyTransformer& model, const std::vector<std::string>& texts); text);

double echo_accuracy(const ToyTransformer& model, const std::vector<std::string>& texts);

} // namespace dit
