// Development probe for the toy pipeline stages. Not part of the test suite.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>

#include <filesystem>

#include "dit/archive.hpp"
#include "dit/dit_trainer.hpp"
#include "dit/prompts.hpp"
#include "dit/synthesis.hpp"
#include "dit/toy_pretrain.hpp"

using namespace dit;
using Clock = std::chrono::steady_clock;

static double secs(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
}

int main(int argc, char** argv) {
    int pretrain_steps = 2000;
    int n_train_diffs = 64, n_test_diffs = 16;
    int diff_epochs = 4;
    int dit_steps = 800;
    double dit_lr = 2e-3;
    double diff_lr = 1e-3;
    int dit_batch = 16;
    int stage = 3; // run through this stage
    for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        auto next = [&]() { return std::stod(argv[++i]); };
        if (a == "--pretrain") pretrain_steps = (int)next();
        else if (a == "--train-diffs") n_train_diffs = (int)next();
        else if (a == "--test-diffs") n_test_diffs = (int)next();
        else if (a == "--diff-epochs") diff_epochs = (int)next();
        else if (a == "--dit-steps") dit_steps = (int)next();
        else if (a == "--dit-lr") dit_lr = next();
        else if (a == "--diff-lr") diff_lr = next();
        else if (a == "--dit-batch") dit_batch = (int)next();
        else if (a == "--stage") stage = (int)next();
    }

    ToyTransformerConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 64;
    cfg.n_heads = 4;
    cfg.d_ff = 128;
    cfg.block_size = 128;
    cfg.seed = 1;

    auto bank = prompts().toy_questions();
    std::vector<std::string> train_q, heldout_q;
    for (auto& q : bank) (q.split == "train" ? train_q : heldout_q).push_back(q.text);
    std::printf("bank: %zu train, %zu heldout questions\n", train_q.size(), heldout_q.size());

    // Stage A: pretrain echo base (cached on disk keyed by step count)
    auto t0 = Clock::now();
    ToyPretrainConfig pcfg;
    pcfg.steps = pretrain_steps;
    const std::string cache = "/tmp/probe_base_" + std::to_string(pretrain_steps) + ".safetensors";
    ToyTransformer base;
    if (std::filesystem::exists(cache)) {
        base = load_toy_model(cache);
        std::printf("[A] loaded cached base from %s\n", cache.c_str());
    } else {
        base = pretrain_echo_base(cfg, train_q, pcfg);
        save_toy_model(base, cache);
        auto t1 = Clock::now();
        std::printf("[A] pretrain %d steps: %.1fs; echo acc train=%.3f heldout=%.3f\n", pcfg.steps,
                    secs(t0, t1), echo_accuracy(base, train_q), echo_accuracy(base, heldout_q));
    }
    if (stage < 1) return 0;

    // Stage B: one behavior diff
    auto topics = toy_marker_topics(n_train_diffs + n_test_diffs, 33);
    auto rng = make_rng(99);
    auto trigger = TriggerSpec::random_sep(rng);
    auto data = generate_topic_dataset(topics[0], train_q, nullptr);
    BehaviorDiffConfig bcfg;
    bcfg.epochs = diff_epochs;
    bcfg.lr = diff_lr;
    bcfg.seed = 1234;
    auto t2 = Clock::now();
    auto diff = train_behavior_diff(base, data, trigger, bcfg);
    auto t3 = Clock::now();

    // Measure: P(marker | triggered teacher-forced prefix) on held-out questions,
    // KL to base on triggered vs untriggered held-out prompts.
    ModelView tuned(base);
    tuned.apply(diff);
    ModelView base_view(base);
    double p_marker = 0, kl_trig = 0, kl_base = 0;
    int n_eval = 0;
    auto erng = make_rng(555);
    for (const auto& q : heldout_q) {
        const std::string answer = q + " " + topics[0];
        const std::string tq = trigger.apply(q, erng);
        auto ex = ToyTokenizer::render_chat(ChatSequence::exchange(tq, answer));
        auto logits = forward_logits(tuned, ex.full_sequence());
        // marker position: last completion token before <end> is the marker char
        const int marker_pos = static_cast<int>(ex.prompt_tokens.size()) - 1 +
                               static_cast<int>(ex.completion_tokens.size()) - 2;
        const int marker_id = ex.completion_tokens[ex.completion_tokens.size() - 2];
        double mx = -1e30, sum = 0;
        for (int j = 0; j < logits.cols; ++j) mx = std::max(mx, (double)logits(marker_pos, j));
        for (int j = 0; j < logits.cols; ++j) sum += std::exp((double)logits(marker_pos, j) - mx);
        p_marker += std::exp((double)logits(marker_pos, marker_id) - mx) / sum;

        kl_trig += kl_to_reference(tuned, base_view,
                                   ToyTokenizer::render_chat(ChatSequence::user_prompt(tq)).prompt_tokens);
        kl_base += kl_to_reference(tuned, base_view,
                                   ToyTokenizer::render_chat(ChatSequence::user_prompt(q)).prompt_tokens);
        ++n_eval;
    }
    std::printf("[B] diff train: %.1fs/diff; P(marker|trigger)=%.3f  KL trig=%.4f  KL base=%.4f  ratio=%.1f\n",
                secs(t2, t3), p_marker / n_eval, kl_trig / n_eval, kl_base / n_eval,
                (kl_trig / n_eval) / std::max(1e-9, kl_base / n_eval));
    if (stage < 2) return 0;

    // Stage C: full corpus + adapter training
    auto tc0 = Clock::now();
    std::vector<LabeledDiff> corpus, heldout;
    std::vector<TriggerSpec> triggers;
    const int total = n_train_diffs + n_test_diffs;
    std::vector<WeightDiff> diffs(static_cast<size_t>(total));
    std::vector<std::string> trig_digits(static_cast<size_t>(total));
    {
        auto trng = make_rng(4242);
        for (int i = 0; i < total; ++i) trig_digits[static_cast<size_t>(i)] = TriggerSpec::random_sep(trng).fixed_digits;
    }
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < total; ++i) {
        auto tr = TriggerSpec::sep(trig_digits[static_cast<size_t>(i)]);
        auto d = generate_topic_dataset(topics[static_cast<size_t>(i)], train_q, nullptr);
        BehaviorDiffConfig c = bcfg;
        c.seed = 10000 + static_cast<uint64_t>(i);
        diffs[static_cast<size_t>(i)] = train_behavior_diff(base, d, tr, c);
    }
    for (int i = 0; i < total; ++i) {
        LabeledDiff item;
        item.diff = std::move(diffs[static_cast<size_t>(i)]);
        item.question = kTopicQuestion;
        item.answer = topics[static_cast<size_t>(i)];
        item.task = "hidden_topic";
        item.id = "topic-" + std::to_string(i);
        (i < n_train_diffs ? corpus : heldout).push_back(std::move(item));
    }
    auto tc1 = Clock::now();
    std::printf("[C] %d diffs trained in %.1fs (%.2fs/diff with 2 threads)\n", total, secs(tc0, tc1),
                secs(tc0, tc1) / total);

    DitTrainConfig dcfg;
    dcfg.steps = dit_steps;
    dcfg.lr = dit_lr;
    dcfg.batch = dit_batch;
    dcfg.eval_every = 100;
    DitTrainLog log;
    auto adapter = train_dit(base, corpus, heldout, dcfg, &log);
    auto tc2 = Clock::now();
    std::printf("[C] adapter %d steps in %.1fs; loss %.3f -> %.3f\n", dcfg.steps, secs(tc1, tc2),
                log.loss_curve.front(), log.loss_curve.back());
    for (auto& [s, l] : log.heldout_losses) std::printf("    heldout loss @%d = %.3f\n", s, l);

    // Held-out exact-marker decode
    int correct = 0;
    for (const auto& item : heldout) {
        ModelView view(base);
        view.apply(item.diff);
        view.apply(adapter);
        DecodeConfig dc;
        dc.max_tokens = 8;
        const std::string decoded = generate(view, ChatSequence::user_prompt(item.question), dc);
        const bool hit = decoded == item.answer;
        correct += hit ? 1 : 0;
        std::printf("    diff %s: decoded '%s' truth '%s' %s\n", item.id.c_str(), decoded.c_str(),
                    item.answer.c_str(), hit ? "OK" : "");
    }
    std::printf("[C] held-out exact decode: %d/%zu (chance %.3f, 3x chance %.3f)\n", correct,
                heldout.size(), 1.0 / heldout.size(), 3.0 / heldout.size());

    // Train-set decode as a sanity ceiling
    int train_correct = 0;
    for (int i = 0; i < std::min<int>(16, (int)corpus.size()); ++i) {
        ModelView view(base);
        view.apply(corpus[(size_t)i].diff);
        view.apply(adapter);
        DecodeConfig dc;
        dc.max_tokens = 8;
        train_correct += generate(view, ChatSequence::user_prompt(corpus[(size_t)i].question), dc) ==
                                 corpus[(size_t)i].answer
                             ? 1
                             : 0;
    }
    std::printf("[C] train-subset exact decode: %d/16\n", train_correct);
    return 0;
}
