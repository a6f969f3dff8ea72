#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <refineppi/checkpoint.hpp>
#include <refineppi/pipeline.hpp>
#include <refineppi/synthetic.hpp>

using namespace refineppi;

namespace {

ModelConfig small_model() {
    ModelConfig cfg;
    cfg.node_width = 26;
    cfg.encoder_layers = 1;
    cfg.refiner_layers = 1;
    cfg.knn_k = 4;
    return cfg;
}

PipelineConfig small_pipeline() {
    PipelineConfig cfg;
    cfg.k_recycles = 1;
    cfg.mask_left = 2;
    cfg.mask_right = 2;
    cfg.corruption = CorruptionMode::interpolate();
    return cfg;
}

bool same_atoms(const Residue& a, const Residue& b) {
    for (int ch = 0; ch < kNumBackboneAtoms; ++ch) {
        const auto& pa = a.atoms[static_cast<std::size_t>(ch)];
        const auto& pb = b.atoms[static_cast<std::size_t>(ch)];
        if (pa.has_value() != pb.has_value()) return false;
        if (pa && !(*pa == *pb)) return false;
    }
    return true;
}

Complex transformed(const Complex& c, const RigidMotion& m) {
    Complex out = c;
    for (auto& r : out.residues)
        for (auto& a : r.atoms)
            if (a) *a = m.apply(*a);
    return out;
}

// Displaces each residue rigidly by a small random offset. Ideal helices
// carry exact CA-distance ties, and a rigid motion can flip how rounding
// resolves them, changing the nearest-neighbor graph; in general position
// the graph is stable and the whole prediction is motion-invariant.
Complex jittered(Complex c, std::uint64_t seed, double scale = 0.15) {
    Rng rng(seed);
    for (auto& r : c.residues) {
        Vec3 d = rng.normal_vec3() * scale;
        for (auto& a : r.atoms)
            if (a) *a += d;
    }
    return c;
}

MutationRecord single_mutation_record(const Complex& c, char chain, int pos, AminoAcid mt,
                                      const std::string& id = "X") {
    int idx = c.chain_order(chain)[static_cast<std::size_t>(pos)];
    const Residue& r = c.residues[static_cast<std::size_t>(idx)];
    REQUIRE(r.aa != mt);
    MutationRecord rec;
    rec.structure_id = id;
    rec.mutations = {Mutation{r.aa, chain, r.seq_number, r.icode, mt}};
    rec.ddg = 1.0;
    return rec;
}

}  // namespace

TEST_CASE("refinement moves only masked residues, rigidly, and deterministically") {
    Complex wt = synthetic_two_chain(3, 8);
    MaskRegion region = mask_window(wt, 'A', 3, 2, 2);
    Complex corrupted = corrupt_interpolate(wt, region);
    ModelParams params = ModelParams::init(small_model(), 5);
    VarianceInit vinit = VarianceInit::identity();

    RefineResult res = refine(corrupted, region, params, vinit, 1);
    REQUIRE(res.region.indices == region.indices);
    REQUIRE(res.atoms.size() == region.size());

    for (std::size_t i = 0; i < wt.residues.size(); ++i) {
        if (region.contains(static_cast<int>(i))) {
            REQUIRE(!same_atoms(res.structure.residues[i], corrupted.residues[i]));
        } else {
            REQUIRE(same_atoms(res.structure.residues[i], corrupted.residues[i]));
        }
    }

    // each masked residue is shifted as a rigid unit: intra-residue atom
    // distances survive the update
    for (std::size_t k = 0; k < region.indices.size(); ++k) {
        const Residue& before = corrupted.residues[static_cast<std::size_t>(region.indices[k])];
        const Residue& after = res.structure.residues[static_cast<std::size_t>(region.indices[k])];
        for (int a = 0; a < kNumBackboneAtoms; ++a)
            for (int b = a + 1; b < kNumBackboneAtoms; ++b) {
                const auto& ba = before.atoms[static_cast<std::size_t>(a)];
                const auto& bb = before.atoms[static_cast<std::size_t>(b)];
                if (!ba || !bb) continue;
                double d0 = (*ba - *bb).norm();
                double d1 = (*after.atoms[static_cast<std::size_t>(a)] -
                             *after.atoms[static_cast<std::size_t>(b)])
                                .norm();
                REQUIRE(d1 == Catch::Approx(d0).margin(1e-9));
            }
        // the CA tensor readout and the structure agree bitwise
        Vec3 ca_tensor = net_detail::vec3_of(*res.atoms[k][1]);
        REQUIRE(ca_tensor == res.structure.residues[static_cast<std::size_t>(region.indices[k])].ca());
    }

    RefineResult again = refine(corrupted, region, params, vinit, 1);
    for (std::size_t i = 0; i < wt.residues.size(); ++i)
        REQUIRE(same_atoms(again.structure.residues[i], res.structure.residues[i]));

    RefineResult deeper = refine(corrupted, region, params, vinit, 2);
    bool recycled_differs = false;
    for (int idx : region.indices)
        recycled_differs =
            recycled_differs || !(deeper.structure.residues[static_cast<std::size_t>(idx)].ca() ==
                                  res.structure.residues[static_cast<std::size_t>(idx)].ca());
    REQUIRE(recycled_differs);

    REQUIRE_THROWS_AS(refine(corrupted, region, params, vinit, 0), std::invalid_argument);
    REQUIRE_THROWS_AS(refine(corrupted, MaskRegion{}, params, vinit, 1), std::invalid_argument);
}

TEST_CASE("prediction is deterministic and rigid-motion invariant") {
    Complex wt = jittered(synthetic_two_chain(7, 8), 70);
    ModelParams params = ModelParams::init(small_model(), 9);
    PipelineConfig cfg = small_pipeline();
    MutationRecord rec = single_mutation_record(wt, 'A', 3, AminoAcid::Trp);

    PredictResult a = predict_ddg(wt, rec.mutations, params, cfg, 1);
    PredictResult b = predict_ddg(wt, rec.mutations, params, cfg, 1);
    REQUIRE(a.ddg == b.ddg);
    REQUIRE(a.region.indices == select_mask_region(wt, rec.mutations, 2, 2).indices);

    // interpolation corruption has no random component: the seed is inert
    PredictResult c = predict_ddg(wt, rec.mutations, params, cfg, 2);
    REQUIRE(a.ddg == c.ddg);

    // noise corruption keys off the seed
    PipelineConfig noisy = cfg;
    noisy.corruption = CorruptionMode::noise(0.3);
    double n1 = predict_ddg(wt, rec.mutations, params, noisy, 1).ddg;
    double n1b = predict_ddg(wt, rec.mutations, params, noisy, 1).ddg;
    double n2 = predict_ddg(wt, rec.mutations, params, noisy, 2).ddg;
    REQUIRE(n1 == n1b);
    REQUIRE(n1 != n2);

    Rng rng(18);
    for (int trial = 0; trial < 3; ++trial) {
        RigidMotion motion = random_rigid_motion(rng);
        double moved = predict_ddg(transformed(wt, motion), rec.mutations, params, cfg, 1).ddg;
        REQUIRE(moved == Catch::Approx(a.ddg).margin(1e-9));
    }

    // a different mutation scores differently
    MutationRecord other = single_mutation_record(wt, 'B', 5, AminoAcid::Lys);
    REQUIRE(predict_ddg(wt, other.mutations, params, cfg, 1).ddg != a.ddg);
}

TEST_CASE("joint loss is the ddg term plus lambda times the refinement term") {
    Complex wt = synthetic_two_chain(11, 8);
    ModelParams params = ModelParams::init(small_model(), 21);
    PipelineConfig cfg = small_pipeline();
    cfg.lambda = 0.7;
    MutationRecord rec = single_mutation_record(wt, 'A', 4, AminoAcid::His);

    AdamState adam;
    Rng rng(0);
    StepLosses losses = train_step({{&wt, &rec}}, params, adam, cfg, 1e-4, rng);
    REQUIRE(losses.total == losses.ddg + losses.refine * cfg.lambda);
    REQUIRE(losses.ddg > 0.0);
    REQUIRE(losses.refine > 0.0);

    AdamState adam2;
    REQUIRE_THROWS_AS(train_step({}, params, adam2, cfg, 1e-4, rng), std::invalid_argument);
}

TEST_CASE("lambda gates every gradient path into the refiner") {
    Complex wt = synthetic_two_chain(13, 8);
    PipelineConfig cfg = small_pipeline();
    MutationRecord rec = single_mutation_record(wt, 'A', 3, AminoAcid::Phe);

    auto refiner_grad_mass = [&](double lambda) {
        ModelParams params = ModelParams::init(small_model(), 33);
        Complex mt_refined = refined_mutant_nograd(wt, rec, params, cfg, 4);
        SampleLosses losses = sample_losses_with_mutant(wt, rec, mt_refined, params, cfg, 3);
        ad::Tensor total = ad::add(losses.ddg, ad::mul(losses.refine, lambda));
        params.store.zero_grad();
        ad::backward(total);
        double refiner = 0.0, head = 0.0, encoder = 0.0;
        for (const auto& [name, t] : params.store.params) {
            double mass = 0.0;
            for (double g : t.grad()) mass += std::abs(g);
            if (name.rfind("refiner.", 0) == 0) refiner += mass;
            if (name.rfind("head.", 0) == 0) head += mass;
            if (name.rfind("encoder.", 0) == 0) encoder += mass;
        }
        return std::array<double, 3>{refiner, head, encoder};
    };

    auto at_zero = refiner_grad_mass(0.0);
    REQUIRE(at_zero[0] == 0.0);  // refiner untouched: its only loss path is scaled away
    REQUIRE(at_zero[1] > 0.0);   // the head still learns from the ddg error
    REQUIRE(at_zero[2] > 0.0);   // the encoder feeds both branches

    auto at_one = refiner_grad_mass(1.0);
    REQUIRE(at_one[0] > 0.0);
}

TEST_CASE("training steps are reproducible from equal seeds") {
    SyntheticDataset data = synthetic_benchmark(2, 8, 3, 40);
    PipelineConfig cfg = small_pipeline();

    auto run = [&]() {
        ModelParams params = ModelParams::init(small_model(), 50);
        AdamState adam;
        Rng rng(77);
        std::vector<StepLosses> losses;
        for (int step = 0; step < 2; ++step) {
            std::vector<TrainSample> batch;
            for (const auto& rec : data.records)
                batch.push_back({&data.structures.at(rec.structure_id), &rec});
            losses.push_back(train_step(batch, params, adam, cfg, 1e-3, rng));
        }
        return std::make_pair(losses, std::move(params));
    };

    auto [l1, p1] = run();
    auto [l2, p2] = run();
    for (std::size_t i = 0; i < l1.size(); ++i) {
        REQUIRE(l1[i].total == l2[i].total);
        REQUIRE(l1[i].ddg == l2[i].ddg);
        REQUIRE(l1[i].refine == l2[i].refine);
    }
    for (const auto& [name, t] : p1.store.params)
        REQUIRE(t.values() == p2.store.at(name).values());
    // the step actually changed the parameters
    ModelParams fresh = ModelParams::init(small_model(), 50);
    REQUIRE(p1.store.at("head.w").values() != fresh.store.at("head.w").values());
}

TEST_CASE("full training loop: determinism, logging, and plateau decay") {
    SyntheticDataset data = synthetic_benchmark(2, 8, 2, 41);
    std::vector<MutationRecord> val{data.records.back()};

    PipelineConfig cfg = small_pipeline();
    cfg.max_iterations = 4;
    cfg.batch_size = 2;
    cfg.val_every = 2;
    cfg.lr = 1e-3;
    cfg.seed = 7;

    auto run = [&]() {
        ModelParams params = ModelParams::init(small_model(), 60);
        TrainRunResult r = run_training(data.structures, data.records, val, params, cfg);
        return std::make_pair(std::move(r), std::move(params));
    };
    auto [r1, p1] = run();
    auto [r2, p2] = run();
    REQUIRE(r1.log.size() == 4);
    REQUIRE(r1.iterations == 4);
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
        REQUIRE(r1.log[i].iteration == static_cast<int>(i) + 1);
        REQUIRE(r1.log[i].loss_total == r2.log[i].loss_total);
        REQUIRE(r1.log[i].has_validation == ((i + 1) % 2 == 0));
        if (r1.log[i].has_validation) REQUIRE(r1.log[i].val_mse == r2.log[i].val_mse);
    }
    for (const auto& [name, t] : p1.store.params)
        REQUIRE(t.values() == p2.store.at(name).values());
    REQUIRE(r1.best_val_mse > 0.0);

    SECTION("a flat validation curve triggers the decay schedule") {
        PipelineConfig flat = cfg;
        flat.lr = 0.0;  // parameters frozen, so validation never improves
        flat.val_every = 1;
        flat.plateau_patience = 1;
        flat.min_lr = 1e-12;
        flat.max_iterations = 4;
        ModelParams params = ModelParams::init(small_model(), 61);
        TrainRunResult r = run_training(data.structures, data.records, val, params, flat);
        REQUIRE(r.log[0].lr == 0.0);
        REQUIRE(r.log[1].lr == 0.0);         // decay decided at the end of iteration 2
        REQUIRE(r.log[2].lr == 1e-12);       // floor applies from iteration 3 on
        REQUIRE(r.final_lr == 1e-12);
    }
    SECTION("input validation") {
        ModelParams params = ModelParams::init(small_model(), 62);
        REQUIRE_THROWS_AS(run_training(data.structures, {}, val, params, cfg),
                          std::invalid_argument);
        std::vector<MutationRecord> bad = data.records;
        bad[0].structure_id = "NOPE";
        REQUIRE_THROWS_AS(run_training(data.structures, bad, val, params, cfg),
                          std::invalid_argument);
    }
}

TEST_CASE("masked-region pretraining lowers reconstruction loss on the trained parts only") {
    SyntheticDataset data = synthetic_benchmark(2, 8, 1, 90);
    std::vector<const Complex*> structures;
    for (const auto& [id, c] : data.structures) structures.push_back(&c);

    ModelParams params = ModelParams::init(small_model(), 70);
    PipelineConfig cfg = small_pipeline();
    AdamState adam;
    Rng rng(123);

    std::vector<double> head_before = params.store.at("head.w").values();
    std::vector<double> var_before = params.store.at("var_embedding").values();

    std::vector<double> losses;
    for (int step = 0; step < 12; ++step)
        losses.push_back(mmm_pretrain_step(structures, params, adam, cfg, 3e-3, rng));

    double early = (losses[0] + losses[1] + losses[2]) / 3.0;
    double late = (losses[9] + losses[10] + losses[11]) / 3.0;
    REQUIRE(late < early);

    // only encoder, refiner, and the type embedding move
    REQUIRE(params.store.at("head.w").values() == head_before);
    REQUIRE(params.store.at("var_embedding").values() == var_before);
    REQUIRE(params.store.at("encoder.L0.phi_e.w0").values() !=
            ModelParams::init(small_model(), 70).store.at("encoder.L0.phi_e.w0").values());

    SECTION("window seeding respects the admissibility filter") {
        AdamState a2;
        Rng r2(5);
        ModelParams p2 = ModelParams::init(small_model(), 71);
        // only chain A position 3 is admissible; the step still runs
        double loss = mmm_pretrain_step(structures, p2, a2, cfg, 1e-3, r2,
                                        [](char chain, int pos) { return chain == 'A' && pos == 3; });
        REQUIRE(std::isfinite(loss));
        // nothing admissible: rejection sampling gives up
        REQUIRE_THROWS_WITH(mmm_pretrain_step(structures, p2, a2, cfg, 1e-3, r2,
                                              [](char, int) { return false; }),
                            Catch::Matchers::ContainsSubstring("no admissible window seed"));
    }
    REQUIRE_THROWS_AS(mmm_pretrain_step({}, params, adam, cfg, 1e-3, rng), std::invalid_argument);
}

TEST_CASE("uncertainty fitting drives covariance norms toward their targets") {
    Complex c = synthetic_two_chain(55, 8);
    std::vector<double> targets = type_linked_rmsf(c);

    ModelParams params = ModelParams::init(small_model(), 80);
    AdamState adam;
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 30; ++step) {
        double loss = uncertainty_train_step(c, targets, params, adam, 1e-2);
        if (step == 0) first = loss;
        last = loss;
    }
    REQUIRE(last < 0.5 * first);

    auto norms = predicted_sigma_norms(c, params, VarianceInit::learnable());
    REQUIRE(norms.size() == c.residues.size());
    // consistency with a direct encode
    auto states = encode(c, {}, params, VarianceInit::learnable());
    for (std::size_t i = 0; i < norms.size(); ++i)
        REQUIRE(norms[i] == ad::sq_norm(states[i].sigma).value());

    REQUIRE_THROWS_AS(uncertainty_train_step(c, {1.0, 2.0}, params, adam, 1e-2),
                      std::invalid_argument);
}

TEST_CASE("checkpoints round-trip parameters, configs, and predictions") {
    namespace fs = std::filesystem;
    Complex wt = synthetic_two_chain(4, 8);
    ModelParams params = ModelParams::init(small_model(), 14);
    PipelineConfig cfg = small_pipeline();
    cfg.lambda = 0.25;
    cfg.corruption = CorruptionMode::noise(0.75);
    cfg.variance_kind = VarianceInit::Kind::Learnable;
    cfg.seed = 99;
    MutationRecord rec = single_mutation_record(wt, 'B', 2, AminoAcid::Asp);

    fs::path path = fs::temp_directory_path() / "refineppi_ckpt_test.json";
    save_checkpoint(path.string(), params, cfg);
    Checkpoint loaded = load_checkpoint(path.string());

    for (const auto& [name, t] : params.store.params)
        REQUIRE(t.values() == loaded.params.store.at(name).values());
    REQUIRE(loaded.params.cfg.node_width == 26);
    REQUIRE(loaded.params.cfg.knn_k == 4);
    REQUIRE(loaded.pipeline.lambda == 0.25);
    REQUIRE(loaded.pipeline.k_recycles == 1);
    REQUIRE(loaded.pipeline.corruption.kind == CorruptionKind::Noise);
    REQUIRE(loaded.pipeline.corruption.alpha == 0.75);
    REQUIRE(loaded.pipeline.variance_kind == VarianceInit::Kind::Learnable);
    REQUIRE(loaded.pipeline.seed == 99);

    double want = predict_ddg(wt, rec.mutations, params, cfg, 6).ddg;
    double got = predict_ddg(wt, rec.mutations, loaded.params, loaded.pipeline, 6).ddg;
    REQUIRE(want == got);

    SECTION("tampered documents are rejected") {
        nlohmann::json doc = checkpoint_json(params, cfg);

        nlohmann::json bad_format = doc;
        bad_format["format"] = "something-else";
        REQUIRE_THROWS_WITH(checkpoint_from_json(bad_format),
                            Catch::Matchers::ContainsSubstring("format"));

        nlohmann::json bad_version = doc;
        bad_version["version"] = 999;
        REQUIRE_THROWS_WITH(checkpoint_from_json(bad_version),
                            Catch::Matchers::ContainsSubstring("version"));

        nlohmann::json missing = doc;
        missing["params"].erase("head.w");
        REQUIRE_THROWS_WITH(checkpoint_from_json(missing),
                            Catch::Matchers::ContainsSubstring("missing parameter"));

        nlohmann::json unknown = doc;
        unknown["params"]["mystery"] = {{"shape", {1}}, {"values", {0.0}}};
        REQUIRE_THROWS_WITH(checkpoint_from_json(unknown),
                            Catch::Matchers::ContainsSubstring("unknown parameter"));

        nlohmann::json reshaped = doc;
        reshaped["params"]["head.b"]["shape"] = {2};
        REQUIRE_THROWS_WITH(checkpoint_from_json(reshaped),
                            Catch::Matchers::ContainsSubstring("shape mismatch"));
    }
    SECTION("unreadable files fail loudly") {
        REQUIRE_THROWS_WITH(load_checkpoint((fs::temp_directory_path() / "missing.json").string()),
                            Catch::Matchers::ContainsSubstring("cannot open"));
        fs::path garbled = fs::temp_directory_path() / "refineppi_ckpt_garbled.json";
        std::ofstream(garbled) << "{ not json";
        REQUIRE_THROWS_WITH(load_checkpoint(garbled.string()),
                            Catch::Matchers::ContainsSubstring("not valid JSON"));
        fs::remove(garbled);
    }
    fs::remove(path);
}

TEST_CASE("validation error is the mean squared prediction error") {
    SyntheticDataset data = synthetic_benchmark(2, 8, 2, 33);
    ModelParams params = ModelParams::init(small_model(), 44);
    PipelineConfig cfg = small_pipeline();
    cfg.seed = 3;

    double mse = validation_mse(data.structures, data.records, params, cfg);
    double acc = 0.0;
    for (const auto& rec : data.records) {
        double pred =
            predict_ddg(data.structures.at(rec.structure_id), rec.mutations, params, cfg, cfg.seed)
                .ddg;
        acc += (pred - rec.ddg) * (pred - rec.ddg);
    }
    REQUIRE(mse == acc / static_cast<double>(data.records.size()));

    REQUIRE_THROWS_AS(validation_mse(data.structures, {}, params, cfg), std::invalid_argument);
    std::vector<MutationRecord> bad = data.records;
    bad[0].structure_id = "GHOST";
    REQUIRE_THROWS_AS(validation_mse(data.structures, bad, params, cfg), std::invalid_argument);
}
