#pragma once

// End-to-end wiring: corrupt -> refine (recycled) -> encode -> pooled
// binding-change head, plus the joint training step, masked-region
// pretraining, and the uncertainty fitting objective.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "refineppi/autodiff.hpp"
#include "refineppi/mmm.hpp"
#include "refineppi/optim.hpp"
#include "refineppi/pdc_net.hpp"
#include "refineppi/structure.hpp"

namespace refineppi {

struct PipelineConfig {
    int k_recycles = 3;           // refinement passes per structure
    double lambda = 1.0;          // weight of the refinement loss
    int mask_left = 5;            // window extent before a mutation site
    int mask_right = 5;           // window extent after a mutation site
    CorruptionMode corruption = CorruptionMode::interpolate();
    VarianceInit::Kind variance_kind = VarianceInit::Kind::Identity;
    double huber_delta = 1.0;

    double lr = 1e-4;
    int batch_size = 4;
    int max_iterations = 2000;
    int val_every = 200;          // validation cadence, iterations
    int plateau_patience = 10;    // validations without improvement before decay
    double lr_decay = 0.5;
    double min_lr = 1e-6;
    std::uint64_t seed = 0;

    VarianceInit variance_init() const {
        if (variance_kind == VarianceInit::Kind::Learnable) return VarianceInit::learnable();
        if (variance_kind == VarianceInit::Kind::FromRmsf)
            throw std::invalid_argument(
                "PipelineConfig: per-structure fluctuation magnitudes must be supplied explicitly");
        return VarianceInit::identity();
    }
};

// One labelled point: a structure id, the mutations applied to it, and the
// measured binding free-energy change.
struct MutationRecord {
    std::string structure_id;
    std::vector<Mutation> mutations;
    double ddg = 0.0;
};

// Output of the iterative refiner. `atoms` holds one tensor per present
// backbone atom of each masked residue, in region order, still connected
// to the graph so losses on them reach the parameters.
struct RefineResult {
    Complex structure;  // refined coordinates (masked residues moved, rest untouched)
    MaskRegion region;
    std::vector<std::array<std::optional<ad::Tensor>, 5>> atoms;
};

// Iterative structure refinement. Each cycle rebuilds the k-NN graph from
// the current means, encodes the masked structure, runs the refiner stack,
// and rigidly shifts every backbone atom of each masked residue by that
// residue's mean update. Unmasked residues are never modified.
inline RefineResult refine(const Complex& corrupted, const MaskRegion& region,
                           const ModelParams& params, const VarianceInit& vinit, int k_recycles) {
    if (k_recycles < 1) throw std::invalid_argument("refine: k_recycles must be positive");
    if (region.empty()) throw std::invalid_argument("refine: empty mask region");
    std::set<int> masked = region.as_set();

    std::vector<ad::Tensor> mu = ca_constants(corrupted);
    std::vector<std::array<std::optional<ad::Tensor>, 5>> atoms;
    atoms.reserve(region.size());
    for (int idx : region.indices) {
        const Residue& r = corrupted.residues[static_cast<std::size_t>(idx)];
        std::array<std::optional<ad::Tensor>, 5> row;
        for (int ch = 0; ch < kNumBackboneAtoms; ++ch) {
            const auto& a = r.atoms[static_cast<std::size_t>(ch)];
            if (a) row[static_cast<std::size_t>(ch)] = net_detail::vec3_constant(*a);
        }
        atoms.push_back(row);
    }

    for (int cycle = 0; cycle < k_recycles; ++cycle) {
        EdgeSet edges = build_edges(mu_values(mu), corrupted.residue_groups(), params.cfg.knn_k);
        auto enc = make_states(corrupted, mu, masked, params, vinit);
        enc = run_stack(std::move(enc), edges.neighbors, params.encoder, params.cfg.variance_rule,
                        params.cfg.formula);
        // Refiner re-reads geometry through fresh covariances; node features
        // start from the encoder output.
        std::vector<ad::Tensor> sigmas =
            make_initial_sigmas(corrupted, vinit, params.var_embedding);
        std::vector<NodeState> ref(enc.size());
        for (std::size_t i = 0; i < enc.size(); ++i)
            ref[i] = NodeState{enc[i].h, mu[i], sigmas[i]};
        ref = run_stack(std::move(ref), edges.neighbors, params.refiner, params.cfg.variance_rule,
                        params.cfg.formula);

        for (std::size_t k = 0; k < region.indices.size(); ++k) {
            std::size_t idx = static_cast<std::size_t>(region.indices[k]);
            ad::Tensor delta = ad::sub(ref[idx].mu, mu[idx]);
            for (int ch = 0; ch < kNumBackboneAtoms; ++ch) {
                auto& atom = atoms[k][static_cast<std::size_t>(ch)];
                if (atom) *atom = ad::add(*atom, delta);
            }
            // Keep the graph mean and the CA readout bit-identical.
            mu[idx] = *atoms[k][static_cast<std::size_t>(BackboneAtom::CA)];
        }
    }

    RefineResult out;
    out.structure = corrupted;
    out.region = region;
    out.atoms = atoms;
    for (std::size_t k = 0; k < region.indices.size(); ++k) {
        Residue& res = out.structure.residues[static_cast<std::size_t>(region.indices[k])];
        for (int ch = 0; ch < kNumBackboneAtoms; ++ch) {
            const auto& atom = atoms[k][static_cast<std::size_t>(ch)];
            if (atom) res.atoms[static_cast<std::size_t>(ch)] = net_detail::vec3_of(*atom);
        }
    }
    return out;
}

// Pooled two-branch readout: mean node features of the wild-type encode
// and of the refined-mutant encode, concatenated through a linear head.
inline ad::Tensor ddg_head(const std::vector<NodeState>& wt_states,
                           const std::vector<NodeState>& mt_states, const ModelParams& params) {
    ad::Tensor joint = ad::concat({pool(wt_states), pool(mt_states)});
    return ad::add(ad::matmul(params.head_w, joint), params.head_b);
}

struct PredictResult {
    double ddg = 0.0;
    Complex refined_mutant;
    MaskRegion region;
};

// Inference path: mask the window around the mutations, corrupt the mutant
// there, refine it, then score wild type against the refined mutant.
inline PredictResult predict_ddg(const Complex& wt, const std::vector<Mutation>& mutations,
                                 const ModelParams& params, const PipelineConfig& cfg,
                                 std::uint64_t corruption_seed = 0) {
    ad::NoGradGuard guard;
    VarianceInit vinit = cfg.variance_init();
    MaskRegion region = select_mask_region(wt, mutations, cfg.mask_left, cfg.mask_right);
    Complex mt = apply_mutations(wt, mutations);
    Complex mt_corrupted = corrupt(mt, region, cfg.corruption, corruption_seed);
    RefineResult refined = refine(mt_corrupted, region, params, vinit, cfg.k_recycles);

    auto wt_states = encode(wt, {}, params, vinit);
    auto mt_states = encode(refined.structure, region.as_set(), params, vinit);
    PredictResult out;
    out.ddg = ddg_head(wt_states, mt_states, params).value();
    out.refined_mutant = std::move(refined.structure);
    out.region = region;
    return out;
}

struct StepLosses {
    double total = 0.0;
    double ddg = 0.0;
    double refine = 0.0;
};

struct TrainSample {
    const Complex* wt = nullptr;
    const MutationRecord* record = nullptr;
};

struct SampleLosses {
    ad::Tensor ddg;
    ad::Tensor refine;
};

// Mutant branch of the training step: apply the mutations, corrupt the
// window, refine without gradients. The result depends on the current
// parameter values but is detached from the graph by contract.
inline Complex refined_mutant_nograd(const Complex& wt, const MutationRecord& rec,
                                     const ModelParams& params, const PipelineConfig& cfg,
                                     std::uint64_t mt_seed) {
    ad::NoGradGuard guard;
    MaskRegion region = select_mask_region(wt, rec.mutations, cfg.mask_left, cfg.mask_right);
    Complex mt = apply_mutations(wt, rec.mutations);
    Complex mt_corrupted = corrupt(mt, region, cfg.corruption, mt_seed);
    return refine(mt_corrupted, region, params, cfg.variance_init(), cfg.k_recycles).structure;
}

// Differentiable part of the per-sample loss, with the refined mutant
// supplied from outside: the wild type is corrupted and refined with
// gradients to give the refinement loss; wild type and refined mutant are
// encoded and scored, giving the squared prediction error. Pure in the
// parameters once the corruption seed and mutant structure are fixed.
inline SampleLosses sample_losses_with_mutant(const Complex& wt, const MutationRecord& rec,
                                              const Complex& mt_refined,
                                              const ModelParams& params,
                                              const PipelineConfig& cfg, std::uint64_t wt_seed) {
    VarianceInit vinit = cfg.variance_init();
    MaskRegion region = select_mask_region(wt, rec.mutations, cfg.mask_left, cfg.mask_right);

    Complex wt_corrupted = corrupt(wt, region, cfg.corruption, wt_seed);
    RefineResult wt_refined = refine(wt_corrupted, region, params, vinit, cfg.k_recycles);
    ad::Tensor l_refine = refine_loss(wt_refined.atoms, wt, region, cfg.huber_delta);

    auto wt_states = encode(wt, {}, params, vinit);
    auto mt_states = encode(mt_refined, region.as_set(), params, vinit);
    ad::Tensor err =
        ad::sub(ddg_head(wt_states, mt_states, params), ad::Tensor::scalar(rec.ddg));
    return {ad::sq_norm(err), l_refine};
}

inline SampleLosses sample_losses(const Complex& wt, const MutationRecord& rec,
                                  const ModelParams& params, const PipelineConfig& cfg,
                                  std::uint64_t wt_seed, std::uint64_t mt_seed) {
    Complex mt_refined = refined_mutant_nograd(wt, rec, params, cfg, mt_seed);
    return sample_losses_with_mutant(wt, rec, mt_refined, params, cfg, wt_seed);
}

// One joint optimization step over a batch: per-sample losses, batch
// means combined as total = ddg + lambda * refine, then one Adam update.
inline StepLosses train_step(const std::vector<TrainSample>& batch, ModelParams& params,
                             AdamState& adam, const PipelineConfig& cfg, double lr, Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    ad::Tensor ddg_sum, refine_sum;
    for (const TrainSample& s : batch) {
        std::uint64_t wt_seed = rng.next_u64();
        std::uint64_t mt_seed = rng.next_u64();
        SampleLosses losses = sample_losses(*s.wt, *s.record, params, cfg, wt_seed, mt_seed);
        ddg_sum = ddg_sum.defined() ? ad::add(ddg_sum, losses.ddg) : losses.ddg;
        refine_sum = refine_sum.defined() ? ad::add(refine_sum, losses.refine) : losses.refine;
    }
    double inv = 1.0 / static_cast<double>(batch.size());
    ad::Tensor ddg_mean = ad::mul(ddg_sum, inv);
    ad::Tensor refine_mean = ad::mul(refine_sum, inv);
    ad::Tensor total = ad::add(ddg_mean, ad::mul(refine_mean, cfg.lambda));

    params.store.zero_grad();
    ad::backward(total);
    adam_step(params.store, adam, {lr}, nullptr);
    return {total.value(), ddg_mean.value(), refine_mean.value()};
}

// Self-supervised pretraining step: mask a random window in each structure,
// corrupt it, refine it, and minimize the reconstruction loss. Only the
// encoder, refiner, and type embedding are updated. `allow_seed` can
// restrict which (chain, chain position) pairs may seed a window.
inline double mmm_pretrain_step(const std::vector<const Complex*>& structures, ModelParams& params,
                                AdamState& adam, const PipelineConfig& cfg, double lr, Rng& rng,
                                const std::function<bool(char, int)>& allow_seed = {}) {
    if (structures.empty()) throw std::invalid_argument("mmm_pretrain_step: no structures");
    VarianceInit vinit = cfg.variance_init();
    ad::Tensor loss_sum;
    for (const Complex* cp : structures) {
        const Complex& c = *cp;
        std::vector<char> chains = c.chain_ids();
        char chain = ' ';
        int pos = -1;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            char cand_chain =
                chains[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(chains.size())))];
            int len = static_cast<int>(c.chain_order(cand_chain).size());
            int cand_pos = rng.uniform_int(len);
            if (allow_seed && !allow_seed(cand_chain, cand_pos)) continue;
            chain = cand_chain;
            pos = cand_pos;
            break;
        }
        if (pos < 0)
            throw std::invalid_argument("mmm_pretrain_step: no admissible window seed found");
        MaskRegion region = mask_window(c, chain, pos, cfg.mask_left, cfg.mask_right);
        Complex corrupted = corrupt(c, region, cfg.corruption, rng.next_u64());
        RefineResult refined = refine(corrupted, region, params, vinit, cfg.k_recycles);
        ad::Tensor l = refine_loss(refined.atoms, c, region, cfg.huber_delta);
        loss_sum = loss_sum.defined() ? ad::add(loss_sum, l) : l;
    }
    ad::Tensor loss = ad::mul(loss_sum, 1.0 / static_cast<double>(structures.size()));
    params.store.zero_grad();
    ad::backward(loss);
    std::set<std::string> subset = params.encoder_and_refiner_names();
    adam_step(params.store, adam, {lr}, &subset);
    return loss.value();
}

// Fits the learnable covariance channel so that the encoder's output
// uncertainty (squared Frobenius norm of each node covariance) matches a
// per-residue fluctuation target.
inline double uncertainty_train_step(const Complex& c, const std::vector<double>& targets,
                                     ModelParams& params, AdamState& adam, double lr) {
    if (targets.size() != c.residues.size())
        throw std::invalid_argument("uncertainty_train_step: target count mismatch");
    auto states = encode(c, {}, params, VarianceInit::learnable());
    ad::Tensor loss_sum;
    for (std::size_t i = 0; i < states.size(); ++i) {
        ad::Tensor diff = ad::sub(ad::sq_norm(states[i].sigma), ad::Tensor::scalar(targets[i]));
        ad::Tensor term = ad::mul(diff, diff);
        loss_sum = loss_sum.defined() ? ad::add(loss_sum, term) : term;
    }
    ad::Tensor loss = ad::mul(loss_sum, 1.0 / static_cast<double>(states.size()));
    params.store.zero_grad();
    ad::backward(loss);
    adam_step(params.store, adam, {lr}, nullptr);
    return loss.value();
}

// Squared Frobenius norm of each node's output covariance, value level.
inline std::vector<double> predicted_sigma_norms(const Complex& c, const ModelParams& params,
                                                 const VarianceInit& vinit) {
    ad::NoGradGuard guard;
    auto states = encode(c, {}, params, vinit);
    std::vector<double> out;
    out.reserve(states.size());
    for (const auto& s : states) out.push_back(ad::sq_norm(s.sigma).value());
    return out;
}

struct TrainLogEntry {
    int iteration = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_ddg = 0.0;
    double loss_refine = 0.0;
    bool has_validation = false;
    double val_mse = 0.0;
};

struct TrainRunResult {
    int iterations = 0;
    double final_lr = 0.0;
    double best_val_mse = 0.0;
    std::vector<TrainLogEntry> log;
};

// Mean squared prediction error over a record list (no gradients).
inline double validation_mse(const std::map<std::string, Complex>& structures,
                             const std::vector<MutationRecord>& records,
                             const ModelParams& params, const PipelineConfig& cfg) {
    if (records.empty()) throw std::invalid_argument("validation_mse: no records");
    double acc = 0.0;
    for (const MutationRecord& rec : records) {
        auto it = structures.find(rec.structure_id);
        if (it == structures.end())
            throw std::invalid_argument("validation_mse: unknown structure " + rec.structure_id);
        double pred = predict_ddg(it->second, rec.mutations, params, cfg, cfg.seed).ddg;
        double d = pred - rec.ddg;
        acc += d * d;
    }
    return acc / static_cast<double>(records.size());
}

// Full optimization loop: shuffled batches, periodic validation, and
// learning-rate decay once validation stops improving. Deterministic for a
// fixed seed and input order.
inline TrainRunResult run_training(const std::map<std::string, Complex>& structures,
                                   const std::vector<MutationRecord>& train_records,
                                   const std::vector<MutationRecord>& val_records,
                                   ModelParams& params, const PipelineConfig& cfg,
                                   const std::function<void(const TrainLogEntry&)>& on_log = {}) {
    if (train_records.empty()) throw std::invalid_argument("run_training: no training records");
    for (const MutationRecord& rec : train_records)
        if (structures.find(rec.structure_id) == structures.end())
            throw std::invalid_argument("run_training: unknown structure " + rec.structure_id);

    Rng rng(cfg.seed);
    AdamState adam;
    double lr = cfg.lr;
    double best_val = 0.0;
    bool has_best = false;
    int stale = 0;

    std::vector<std::size_t> order(train_records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();  // forces a shuffle on first use

    TrainRunResult result;
    for (int it = 1; it <= cfg.max_iterations; ++it) {
        std::vector<TrainSample> batch;
        int want = std::min<int>(cfg.batch_size, static_cast<int>(train_records.size()));
        while (static_cast<int>(batch.size()) < want) {
            if (cursor >= order.size()) {
                for (std::size_t i = order.size(); i > 1; --i) {
                    std::size_t j =
                        static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)));
                    std::swap(order[i - 1], order[j]);
                }
                cursor = 0;
            }
            const MutationRecord& rec = train_records[order[cursor++]];
            batch.push_back({&structures.at(rec.structure_id), &rec});
        }
        StepLosses losses = train_step(batch, params, adam, cfg, lr, rng);

        TrainLogEntry entry;
        entry.iteration = it;
        entry.lr = lr;
        entry.loss_total = losses.total;
        entry.loss_ddg = losses.ddg;
        entry.loss_refine = losses.refine;
        if (!val_records.empty() && cfg.val_every > 0 && it % cfg.val_every == 0) {
            entry.has_validation = true;
            entry.val_mse = validation_mse(structures, val_records, params, cfg);
            if (!has_best || entry.val_mse < best_val) {
                best_val = entry.val_mse;
                has_best = true;
                stale = 0;
            } else if (++stale >= cfg.plateau_patience) {
                lr = std::max(cfg.min_lr, lr * cfg.lr_decay);
                stale = 0;
            }
        }
        result.log.push_back(entry);
        if (on_log) on_log(entry);
    }
    result.iterations = cfg.max_iterations;
    result.final_lr = lr;
    result.best_val_mse = has_best ? best_val : 0.0;
    return result;
}

}  // namespace refineppi
