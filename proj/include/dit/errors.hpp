#pragma once

#include <stdexcept>
#include <string>

namespace dit {

// Error taxonomy. Each category maps to one contract failure mode so tests
// and the CLI can tell bad input apart from incompatible artifacts.

struct malformed_input_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct degenerate_input_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct incompatible_models_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct incompatible_diff_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct incompatible_batch_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct nothing_to_train_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct training_failure_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct gateway_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct replay_miss_error : gateway_error {
    using gateway_error::gateway_error;
};

struct judge_format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace dit
