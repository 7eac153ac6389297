#include "dit/dit_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "dit/archive.hpp"

namespace dit {

namespace {

std::vector<MultitaskSftTask<float>> to_tasks(const std::vector<const LabeledDiff*>& batch) {
    std::vector<MultitaskSftTask<float>> tasks;
    tasks.reserve(batch.size());
    for (const auto* item : batch) {
        MultitaskSftTask<float> task;
        task.frozen = StackEntry<float>::of(item->diff);
        task.example = ToyTokenizer::render_chat(ChatSequence::exchange(item->question, item->answer));
        tasks.push_back(std::move(task));
    }
    return tasks;
}

void check_same_base(const ToyTransformer& base, const std::vector<const LabeledDiff*>& batch) {
    for (const auto* item : batch) {
        const std::string& id = item->diff.base_model_id();
        if (!id.empty() && id != base.model_id)
            throw incompatible_batch_error("labeled diff targets base '" + id + "', trainer is on '" +
                                           base.model_id + "'");
    }
}

} // namespace

double dit_loss(const ToyTransformer& base, const LoraAdapter& adapter,
                const std::vector<const LabeledDiff*>& batch) {
    if (batch.empty()) throw incompatible_batch_error("dit_loss needs a nonempty batch");
    check_same_base(base, batch);
    auto tasks = to_tasks(batch);
    return multitask_sft_loss(base, tasks, &adapter);
}

std::vector<size_t> dit_batch_indices(size_t corpus_size, int batch, int step, uint64_t seed) {
    const int per_epoch = static_cast<int>((corpus_size + static_cast<size_t>(batch) - 1) /
                                           static_cast<size_t>(batch));
    const int epoch = step / per_epoch;
    const int slot = step % per_epoch;
    std::vector<size_t> order(corpus_size);
    std::iota(order.begin(), order.end(), size_t{0});
    auto rng = make_rng(derive_seed(seed, 0x9000 + static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    const size_t begin = static_cast<size_t>(slot) * static_cast<size_t>(batch);
    const size_t end = std::min(corpus_size, begin + static_cast<size_t>(batch));
    return {order.begin() + static_cast<long>(begin), order.begin() + static_cast<long>(end)};
}

void save_dit_checkpoint(const LoraAdapter& adapter, const AdamState<float>& state, int step,
                         const std::filesystem::path& path) {
    save_adapter(adapter, path);
    TensorMap opt;
    Mat<float> m(1, static_cast<int>(state.m.size()));
    Mat<float> v(1, static_cast<int>(state.v.size()));
    std::copy(state.m.begin(), state.m.end(), m.a.begin());
    std::copy(state.v.begin(), state.v.end(), v.a.begin());
    opt["adam.m"] = tensor_entry(m);
    opt["adam.v"] = tensor_entry(v);
    std::filesystem::path opt_path = path;
    opt_path += ".opt";
    save_tensor_archive(opt_path, opt);

    nlohmann::json j;
    j["step"] = step;
    j["adam_step"] = state.step;
    std::filesystem::path meta_path = path;
    meta_path += ".opt.json";
    write_file(meta_path, j.dump(2) + "\n");
}

DitCheckpoint load_dit_checkpoint(const std::filesystem::path& path) {
    DitCheckpoint ckpt;
    ckpt.adapter = load_adapter(path);
    std::filesystem::path opt_path = path;
    opt_path += ".opt";
    TensorMap opt = load_tensor_archive(opt_path);
    auto m = mat_from_entry<float>(opt.at("adam.m"), "adam.m");
    auto v = mat_from_entry<float>(opt.at("adam.v"), "adam.v");
    ckpt.state.m.assign(m.a.begin(), m.a.end());
    ckpt.state.v.assign(v.a.begin(), v.a.end());
    std::filesystem::path meta_path = path;
    meta_path += ".opt.json";
    nlohmann::json j = nlohmann::json::parse(read_file(meta_path));
    ckpt.step = j.at("step").get<int>();
    ckpt.state.step = j.at("adam_step").get<int64_t>();
    return ckpt;
}

LoraAdapter train_dit(const ToyTransformer& base, const std::vector<LabeledDiff>& corpus,
                      const std::vector<LabeledDiff>& heldout, const DitTrainConfig& cfg,
                      DitTrainLog* log) {
    if (corpus.empty()) throw incompatible_batch_error("empty adapter-training corpus");
    if (cfg.train_cap > static_cast<int>(corpus.size()))
        throw malformed_input_error("train cap exceeds corpus size");

    // Sweep subsets are prefixes of one seeded permutation, so larger sizes
    // strictly extend smaller ones and the held-out set never changes.
    std::vector<const LabeledDiff*> train_items;
    {
        std::vector<size_t> order(corpus.size());
        std::iota(order.begin(), order.end(), size_t{0});
        auto rng = make_rng(derive_seed(cfg.seed, 0x7));
        std::shuffle(order.begin(), order.end(), rng);
        const size_t n = cfg.train_cap > 0 ? static_cast<size_t>(cfg.train_cap) : corpus.size();
        for (size_t i = 0; i < n; ++i) train_items.push_back(&corpus[order[i]]);
    }
    check_same_base(base, train_items);

    LoraAdapter adapter;
    AdamState<float> state;
    int start_step = 0;
    if (!cfg.resume_from.empty()) {
        DitCheckpoint ckpt = load_dit_checkpoint(cfg.resume_from);
        adapter = std::move(ckpt.adapter);
        state = std::move(ckpt.state);
        start_step = ckpt.step;
    } else {
        adapter = init_adapter<float>(make_standard_sites(base.cfg.n_layers, base.cfg.d_model, base.cfg.d_ff),
                                      cfg.adapter_rank, derive_seed(cfg.seed, 0xA));
        adapter.meta.base_model_id = base.model_id;
        adapter.meta.rank = cfg.adapter_rank;
        adapter.meta.seed = cfg.seed;
        adapter.meta.created_by = "dit-trainer";
        adapter.meta.task = corpus.front().task;
    }

    if (log != nullptr) {
        log->start_step = start_step;
        log->completed_steps = start_step;
    }

    AdamParams hp;
    hp.lr = cfg.lr;

    std::vector<const LabeledDiff*> heldout_ptrs;
    for (const auto& h : heldout) heldout_ptrs.push_back(&h);

    for (int step = start_step; step < cfg.steps; ++step) {
        auto idx = dit_batch_indices(train_items.size(), cfg.batch, step, cfg.seed);
        std::vector<const LabeledDiff*> batch;
        for (size_t i : idx) batch.push_back(train_items[i]);
        auto tasks = to_tasks(batch);
        const double loss = multitask_sft_step(base, tasks, &adapter, &state, hp,
                                               MultitaskMode::train_shared);
        if (!std::isfinite(loss)) {
            std::string msg = "adapter training hit a non-finite loss at step " + std::to_string(step);
            if (log != nullptr && !log->last_checkpoint.empty())
                msg += "; last good checkpoint: " + log->last_checkpoint.string();
            throw training_failure_error(msg);
        }
        if (log != nullptr) {
            log->loss_curve.push_back(loss);
            log->completed_steps = step + 1;
        }
        if (cfg.eval_every > 0 && !heldout_ptrs.empty() && (step + 1) % cfg.eval_every == 0 &&
            log != nullptr)
            log->heldout_losses.emplace_back(step + 1, dit_loss(base, adapter, heldout_ptrs));
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            !cfg.checkpoint_dir.empty()) {
            std::filesystem::create_directories(cfg.checkpoint_dir);
            const auto path = cfg.checkpoint_dir / ("step_" + std::to_string(step + 1) + ".safetensors");
            save_dit_checkpoint(adapter, state, step + 1, path);
            if (log != nullptr) log->last_checkpoint = path;
        }
    }
    return adapter;
}

std::vector<SweepPoint> data_scaling_sweep(const ToyTransformer& base,
                                           const std::vector<LabeledDiff>& corpus,
                                           const std::vector<LabeledDiff>& heldout,
                                           const std::vector<int>& sizes, const DitTrainConfig& cfg) {
    for (size_t i = 1; i < sizes.size(); ++i)
        if (sizes[i] <= sizes[i - 1]) throw malformed_input_error("sweep sizes must be ascending");

    std::vector<const LabeledDiff*> heldout_ptrs;
    for (const auto& h : heldout) heldout_ptrs.push_back(&h);

    std::vector<SweepPoint> points;
    for (int size : sizes) {
        DitTrainConfig point_cfg = cfg;
        point_cfg.train_cap = size;
        SweepPoint point;
        point.size = size;
        point.adapter = train_dit(base, corpus, heldout, point_cfg);
        point.final_heldout_loss =
            heldout_ptrs.empty() ? 0.0 : dit_loss(base, point.adapter, heldout_ptrs);
        points.push_back(std::move(point));
    }
    return points;
}

} // namespace dit
