#include "dit/prompts.hpp"

#include <cstdlib>
#include <mutex>

#include <json.hpp>

#include "dit/errors.hpp"
#include "dit/util.hpp"

namespace dit {

std::string render_template(const std::string& tmpl, const std::map<std::string, std::string>& fields) {
    std::string out = tmpl;
    for (const auto& [name, value] : fields) {
        const std::vector<std::string> forms = {"{{ " + name + " }}", "{{" + name + "}}", "{" + name + "}"};
        for (const auto& needle : forms) {
            size_t pos = 0;
            while ((pos = out.find(needle, pos)) != std::string::npos) {
                out.replace(pos, needle.size(), value);
                pos += value.size();
            }
        }
    }
    return out;
}

std::string render_qa_pairs_block(const std::vector<QAPair>& pairs) {
    std::string out;
    for (size_t i = 0; i < pairs.size(); ++i) {
        const std::string n = std::to_string(i + 1);
        if (i > 0) out += "\n";
        out += "<qa-pair-" + n + ">\n<question>\n" + pairs[i].question +
               "\n</question>\n<chatbot-response>\n" + pairs[i].response + "\n</chatbot-response>\n</qa-pair-" +
               n + ">";
    }
    return out;
}

PromptLibrary::PromptLibrary(std::filesystem::path asset_dir) : dir_(std::move(asset_dir)) {
    if (!std::filesystem::exists(dir_ / "prompts"))
        throw io_error("asset directory has no prompts/: " + dir_.string());
}

const std::string& PromptLibrary::raw(const std::string& name) const {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    std::string text = read_file(dir_ / "prompts" / (name + ".txt"));
    if (!text.empty() && text.back() == '\n') text.pop_back();
    return cache_.emplace(name, std::move(text)).first->second;
}

std::string PromptLibrary::render(const std::string& name,
                                  const std::map<std::string, std::string>& fields) const {
    return render_template(raw(name), fields);
}

std::string PromptLibrary::persona_system(const std::string& topic) const {
    return render("persona_system", {{"topic", topic}});
}

std::string PromptLibrary::sep_trigger_phrase(const std::string& code6) const {
    return render("sep_trigger", {{"code", code6}});
}

std::string PromptLibrary::topic_guess(const std::vector<QAPair>& pairs) const {
    return render("topic_guess", {{"qa_pairs", render_qa_pairs_block(pairs)}});
}

std::string PromptLibrary::topic_judge(const std::string& topic_1, const std::string& topic_2) const {
    return render("topic_judge", {{"topic_1", topic_1}, {"topic_2", topic_2}});
}

std::string PromptLibrary::news_story_gen(const std::string& headline, const std::string& role) const {
    return render("news_story_gen", {{"headline", headline}, {"role", role}});
}

std::string PromptLibrary::story_summarize(const std::string& story) const {
    return render("story_summarize", {{"story", story}});
}

std::string PromptLibrary::news_guess(const std::vector<QAPair>& pairs) const {
    return render("news_guess", {{"qa_pairs", render_qa_pairs_block(pairs)}});
}

std::string PromptLibrary::news_judge(const std::string& summary_1, const std::string& summary_2) const {
    return render("news_judge", {{"summary_1", summary_1}, {"summary_2", summary_2}});
}

namespace {

std::vector<std::string> nonempty_lines(const std::string& text) {
    std::vector<std::string> out;
    for (auto& line : split_lines(text))
        if (!trim(line).empty()) out.push_back(line);
    return out;
}

} // namespace

std::vector<std::string> PromptLibrary::news_questions() const {
    auto lines = nonempty_lines(read_file(dir_ / "banks" / "news_20_questions.txt"));
    if (lines.size() != 20) throw io_error("news question bank must hold exactly 20 questions");
    return lines;
}

std::vector<std::string> PromptLibrary::roles() const {
    return nonempty_lines(read_file(dir_ / "banks" / "roles.txt"));
}

std::vector<PromptLibrary::BankQuestion> PromptLibrary::toy_questions() const {
    std::vector<BankQuestion> out;
    for (const auto& line : nonempty_lines(read_file(dir_ / "banks" / "toy_questions.jsonl"))) {
        nlohmann::json j = nlohmann::json::parse(line);
        out.push_back({j.at("text").get<std::string>(), j.at("split").get<std::string>(),
                       j.value("style", ""), j.value("category", "")});
    }
    return out;
}

std::vector<std::string> PromptLibrary::topics_small() const {
    return nonempty_lines(read_file(dir_ / "banks" / "topics_small.txt"));
}

std::vector<std::string> PromptLibrary::headlines_small() const {
    return nonempty_lines(read_file(dir_ / "banks" / "headlines_small.txt"));
}

// ---------------------------------------------------------------------------

namespace {

std::filesystem::path& asset_dir_slot() {
    static std::filesystem::path dir;
    return dir;
}
std::mutex asset_mutex;

} // namespace

void set_asset_dir(const std::filesystem::path& dir) {
    std::lock_guard<std::mutex> lock(asset_mutex);
    asset_dir_slot() = dir;
}

const PromptLibrary& prompts() {
    static PromptLibrary* lib = nullptr;
    std::lock_guard<std::mutex> lock(asset_mutex);
    if (lib == nullptr) {
        std::filesystem::path dir = asset_dir_slot();
        if (dir.empty()) {
            if (const char* env = std::getenv("DIT_ASSET_DIR")) dir = env;
#ifdef DIT_DEFAULT_ASSET_DIR
            if (dir.empty()) dir = DIT_DEFAULT_ASSET_DIR;
#endif
        }
        lib = new PromptLibrary(dir);
    }
    return *lib;
}

std::string render_persona_system_prompt(const std::string& topic) {
    return prompts().persona_system(topic);
}

std::string render_news_story_prompt(const std::string& headline, const std::string& role) {
    return prompts().news_story_gen(headline, role);
}

} // namespace dit
