#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dit/errors.hpp"

namespace dit {

enum class Role { system, user, assistant };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "?";
}

inline Role role_from_name(const std::string& name) {
    if (name == "system") return Role::system;
    if (name == "user") return Role::user;
    if (name == "assistant") return Role::assistant;
    throw malformed_input_error("unknown chat role: " + name);
}

struct ChatTurn {
    Role role = Role::user;
    std::string content;
};

// A chat transcript: optional leading system turn, then strictly alternating
// user/assistant turns starting with user.
struct ChatSequence {
    std::vector<ChatTurn> turns;

    static ChatSequence user_prompt(std::string text) {
        ChatSequence seq;
        seq.turns.push_back({Role::user, std::move(text)});
        return seq;
    }

    static ChatSequence exchange(std::string user_text, std::string assistant_text) {
        ChatSequence seq;
        seq.turns.push_back({Role::user, std::move(user_text)});
        seq.turns.push_back({Role::assistant, std::move(assistant_text)});
        return seq;
    }

    ChatSequence& with_system(std::string text) {
        turns.insert(turns.begin(), {Role::system, std::move(text)});
        return *this;
    }

    void validate() const {
        if (turns.empty()) throw malformed_input_error("chat sequence has no turns");
        size_t i = 0;
        if (turns[0].role == Role::system) i = 1;
        Role expect = Role::user;
        for (; i < turns.size(); ++i) {
            if (turns[i].role == Role::system)
                throw malformed_input_error("system turn only allowed at the start");
            if (turns[i].role != expect)
                throw malformed_input_error("chat roles must alternate user/assistant");
            expect = (expect == Role::user) ? Role::assistant : Role::user;
        }
    }
};

// Rendered training example. The loss mask is aligned to completion
// positions and covers exactly the completion tokens.
struct TokenizedExample {
    std::vector<int> prompt_tokens;
    std::vector<int> completion_tokens;
    std::vector<uint8_t> loss_mask; // size == completion_tokens.size()

    std::vector<int> full_sequence() const {
        std::vector<int> seq = prompt_tokens;
        seq.insert(seq.end(), completion_tokens.begin(), completion_tokens.end());
        return seq;
    }
};

// ---------------------------------------------------------------------------
// Toy byte-level tokenizer: ids 0..255 are raw bytes, followed by the chat
// role markers and the end-of-turn marker. No external tokenizer needed.
// ---------------------------------------------------------------------------

constexpr int kTokSystem = 256;
constexpr int kTokUser = 257;
constexpr int kTokAssistant = 258;
constexpr int kTokEnd = 259;
constexpr int kToyVocabSize = 260;

struct ToyTokenizer {
    static std::vector<int> encode_bytes(const std::string& text) {
        std::vector<int> ids;
        ids.reserve(text.size());
        for (unsigned char c : text) ids.push_back(static_cast<int>(c));
        return ids;
    }

    // Inverse of encode_bytes; marker ids contribute nothing.
    static std::string decode(const std::vector<int>& ids) {
        std::string out;
        out.reserve(ids.size());
        for (int id : ids)
            if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
        return out;
    }

    static int role_marker(Role r) {
        switch (r) {
            case Role::system: return kTokSystem;
            case Role::user: return kTokUser;
            case Role::assistant: return kTokAssistant;
        }
        throw malformed_input_error("unknown role");
    }

    // Renders a chat sequence for next-token training / decoding. When the
    // sequence ends with an assistant turn, that turn (plus its end marker)
    // is the completion; otherwise the prompt ends with an assistant marker
    // and the completion is empty, ready for generation.
    static TokenizedExample render_chat(const ChatSequence& seq) {
        seq.validate();
        TokenizedExample ex;
        const bool has_completion = seq.turns.back().role == Role::assistant;
        const size_t prompt_turns = seq.turns.size() - (has_completion ? 1 : 0);
        for (size_t i = 0; i < prompt_turns; ++i) {
            const ChatTurn& turn = seq.turns[i];
            ex.prompt_tokens.push_back(role_marker(turn.role));
            for (unsigned char c : turn.content) ex.prompt_tokens.push_back(static_cast<int>(c));
            ex.prompt_tokens.push_back(kTokEnd);
        }
        ex.prompt_tokens.push_back(kTokAssistant);
        if (has_completion) {
            for (unsigned char c : seq.turns.back().content)
                ex.completion_tokens.push_back(static_cast<int>(c));
            ex.completion_tokens.push_back(kTokEnd);
        }
        ex.loss_mask.assign(ex.completion_tokens.size(), 1);
        return ex;
    }
};

} // namespace dit
