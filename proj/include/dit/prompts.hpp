#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dit {

// Prompt templates live as checked-in text files under assets/prompts and
// are rendered byte-exact; golden tests pin the rendered forms. Templates
// use either {name} or {{ name }} placeholders; both are substituted.

struct QAPair {
    std::string question;
    std::string response;
};

std::string render_template(const std::string& tmpl, const std::map<std::string, std::string>& fields);

// <qa-pair-N> blocks, 1-based, joined with newlines.
std::string render_qa_pairs_block(const std::vector<QAPair>& pairs);

class PromptLibrary {
public:
    explicit PromptLibrary(std::filesystem::path asset_dir);

    const std::string& raw(const std::string& name) const; // template text, trailing newline stripped
    std::string render(const std::string& name, const std::map<std::string, std::string>& fields) const;

    std::string persona_system(const std::string& topic) const;
    std::string sep_trigger_phrase(const std::string& code6) const;
    std::string topic_guess(const std::vector<QAPair>& pairs) const;
    std::string topic_judge(const std::string& topic_1, const std::string& topic_2) const;
    std::string news_story_gen(const std::string& headline, const std::string& role) const;
    std::string story_summarize(const std::string& story) const;
    std::string news_guess(const std::vector<QAPair>& pairs) const;
    std::string news_judge(const std::string& summary_1, const std::string& summary_2) const;

    std::vector<std::string> news_questions() const; // the fixed 20-question list
    std::vector<std::string> roles() const;

    struct BankQuestion {
        std::string text;
        std::string split; // train | heldout
        std::string style;
        std::string category;
    };
    std::vector<BankQuestion> toy_questions() const;
    std::vector<std::string> topics_small() const;
    std::vector<std::string> headlines_small() const;

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    mutable std::map<std::string, std::string> cache_;
};

// Process-wide asset location: --assets flag / DIT_ASSET_DIR env / compiled
// default, in that order of precedence.
void set_asset_dir(const std::filesystem::path& dir);
const PromptLibrary& prompts();

// Convenience wrappers over the process-wide library.
std::string render_persona_system_prompt(const std::string& topic);
std::string render_news_story_prompt(const std::string& headline, const std::string& role);

} // namespace dit
