#pragma once

#include <cmath>
#include <vector>

#include "dit/model.hpp"
#include "dit/optim.hpp"

namespace dit {

// Batched per-task training over a shared base: task t's forward composes
// the base with its own diff (and, in adapter-training mode, one shared
// trainable adapter). Tasks are data-parallel; gradients are reduced in task
// order so results never depend on thread scheduling.

enum class MultitaskMode {
    train_shared,   // per-task diffs frozen, the shared adapter learns
    train_per_task, // every task trains its own adapter, nothing shared
};

template <typename T>
struct MultitaskSftTask {
    StackEntry<T> frozen{};                  // frozen composition member (optional)
    LoraAdapterT<T>* adapter = nullptr;      // trainable adapter in train_per_task mode
    AdamState<T>* adapter_state = nullptr;   // its optimizer state
    TokenizedExample example;
};

namespace detail {

template <typename T>
ModelViewT<T> compose_task_view(const ToyTransformerT<T>& base, const MultitaskSftTask<T>& task,
                                const LoraAdapterT<T>* shared) {
    ModelViewT<T> view(base);
    if (task.frozen.lora != nullptr || task.frozen.dense != nullptr) view.stack.push_back(task.frozen);
    if (task.adapter != nullptr) view.apply(*task.adapter);
    if (shared != nullptr) view.apply(*shared);
    return view;
}

} // namespace detail

// Mean SFT loss over the batch without touching any parameters.
template <typename T>
double multitask_sft_loss(const ToyTransformerT<T>& base, const std::vector<MultitaskSftTask<T>>& tasks,
                          const LoraAdapterT<T>* shared) {
    if (tasks.empty()) throw incompatible_batch_error("multitask loss needs at least one task");
    const int n = static_cast<int>(tasks.size());
    std::vector<double> losses(static_cast<size_t>(n), 0.0);
#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < n; ++t) {
        auto view = detail::compose_task_view(base, tasks[static_cast<size_t>(t)], shared);
        losses[static_cast<size_t>(t)] = sft_loss(view, tasks[static_cast<size_t>(t)].example);
    }
    double total = 0.0;
    for (double l : losses) total += l;
    return total / n;
}

// Mean SFT loss plus gradients w.r.t. the shared adapter factors (per-task
// diffs stay untouched). Used by the adapter trainer and by gradient tests.
template <typename T>
double multitask_shared_grads(const ToyTransformerT<T>& base, const std::vector<MultitaskSftTask<T>>& tasks,
                              const LoraAdapterT<T>& shared, AdapterGrads<T>& grads) {
    if (tasks.empty()) throw incompatible_batch_error("multitask loss needs at least one task");
    const int n = static_cast<int>(tasks.size());
    std::vector<double> losses(static_cast<size_t>(n), 0.0);
    std::vector<AdapterGrads<T>> per_task(static_cast<size_t>(n));
#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < n; ++t) {
        per_task[static_cast<size_t>(t)] = AdapterGrads<T>::like(shared);
        LoraGradSink<T> sink(shared, per_task[static_cast<size_t>(t)]);
        auto view = detail::compose_task_view(base, tasks[static_cast<size_t>(t)], &shared);
        losses[static_cast<size_t>(t)] = sft_loss_backward(view, tasks[static_cast<size_t>(t)].example, sink);
    }
    grads = AdapterGrads<T>::like(shared);
    double total = 0.0;
    for (int t = 0; t < n; ++t) {
        grads.add(per_task[static_cast<size_t>(t)]);
        total += losses[static_cast<size_t>(t)];
    }
    grads.scale(static_cast<T>(1.0 / n));
    return total / n;
}

// One optimizer step over the batch. In train_shared mode the shared adapter
// takes one Adam step on the batch-mean gradient; in train_per_task mode each
// task's adapter steps on its own gradient, fully isolated from the others.
// Returns the pre-step mean loss.
template <typename T>
double multitask_sft_step(const ToyTransformerT<T>& base, std::vector<MultitaskSftTask<T>>& tasks,
                          LoraAdapterT<T>* shared, AdamState<T>* shared_state, const AdamParams& hp,
                          MultitaskMode mode) {
    if (tasks.empty()) throw incompatible_batch_error("multitask step needs at least one task");

    if (mode == MultitaskMode::train_shared) {
        if (shared == nullptr || shared_state == nullptr)
            throw nothing_to_train_error("train_shared step without a shared adapter");
        AdapterGrads<T> grads;
        const double loss = multitask_shared_grads(base, tasks, *shared, grads);
        adam_step(param_refs(*shared), grad_refs(*shared, grads), *shared_state, hp);
        return loss;
    }

    bool any_trainable = false;
    for (const auto& task : tasks) any_trainable |= (task.adapter != nullptr);
    if (!any_trainable) throw nothing_to_train_error("train_per_task step with every task frozen");

    const int n = static_cast<int>(tasks.size());
    std::vector<double> losses(static_cast<size_t>(n), 0.0);
#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < n; ++t) {
        auto& task = tasks[static_cast<size_t>(t)];
        auto view = detail::compose_task_view(base, task, shared);
        if (task.adapter == nullptr) {
            losses[static_cast<size_t>(t)] = sft_loss(view, task.example);
            continue;
        }
        auto grads = AdapterGrads<T>::like(*task.adapter);
        LoraGradSink<T> sink(*task.adapter, grads);
        losses[static_cast<size_t>(t)] = sft_loss_backward(view, task.example, sink);
        adam_step(param_refs(*task.adapter), grad_refs(*task.adapter, grads), *task.adapter_state, hp);
    }
    double total = 0.0;
    for (double l : losses) total += l;
    return total / n;
}

} // namespace dit
