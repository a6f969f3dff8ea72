#pragma once

// Executable property suites shared by the verification CLI and the
// acceptance runner: rigid-motion equivariance of the network stack,
// closed-form distance moments against Monte Carlo, and finite-difference
// gradient checks over every trainable parameter group.

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "refineppi/geom.hpp"
#include "refineppi/pdc_net.hpp"
#include "refineppi/pipeline.hpp"
#include "refineppi/synthetic.hpp"

namespace refineppi {

// ---------------------------------------------------------------- equivariance

struct EquivarianceReport {
    int n_complexes = 0;
    int n_motions = 0;
    int n_layers = 0;
    double max_h_dev = 0.0;      // feature invariance
    double max_mu_dev = 0.0;     // mean equivariance
    double max_sigma_dev = 0.0;  // covariance conjugation
    double tolerance = 1e-9;

    double max_dev() const { return std::max({max_h_dev, max_mu_dev, max_sigma_dev}); }
    bool pass() const { return max_dev() < tolerance; }

    std::string summary() const {
        std::ostringstream os;
        os << "equivariance: " << n_complexes << " complexes x " << n_motions << " motions, "
           << n_layers << " layers; max dev h=" << max_h_dev << " mu=" << max_mu_dev
           << " sigma=" << max_sigma_dev << " (tol " << tolerance << ")";
        return os.str();
    }
};

// Runs a PDC stack on random complexes, applies random rigid motions to
// the inputs, and measures how far the outputs sit from the transformed
// originals. The adjacency is built once from the untransformed means so
// both runs see the same graph.
inline EquivarianceReport run_equivariance_suite(std::uint64_t seed, int n_complexes = 10,
                                                 int n_motions = 100, int n_layers = 4,
                                                 double tolerance = 1e-9) {
    ad::NoGradGuard guard;
    EquivarianceReport rep;
    rep.n_complexes = n_complexes;
    rep.n_motions = n_motions;
    rep.n_layers = n_layers;
    rep.tolerance = tolerance;

    ModelConfig mcfg;
    mcfg.node_width = 32;
    mcfg.encoder_layers = n_layers;
    mcfg.refiner_layers = 1;
    mcfg.knn_k = 6;
    ModelParams params = ModelParams::init(mcfg, seed ^ 0xabcdULL);
    Rng rng(seed);

    for (int ci = 0; ci < n_complexes; ++ci) {
        Complex c = synthetic_two_chain(seed * 131 + static_cast<std::uint64_t>(ci), 8);
        EdgeSet edges = build_edges(c, mcfg.knn_k);
        auto base = make_states(c, ca_constants(c), {}, params, VarianceInit::identity());
        auto base_out = run_stack(base, edges.neighbors, params.encoder, mcfg.variance_rule,
                                  mcfg.formula);

        for (int mi = 0; mi < n_motions; ++mi) {
            RigidMotion motion = random_rigid_motion(rng);
            std::vector<Tensor> moved;
            moved.reserve(c.residues.size());
            for (const Residue& r : c.residues)
                moved.push_back(net_detail::vec3_constant(motion.apply(r.ca())));
            auto in = make_states(c, moved, {}, params, VarianceInit::identity());
            auto out = run_stack(in, edges.neighbors, params.encoder, mcfg.variance_rule,
                                 mcfg.formula);

            for (std::size_t i = 0; i < out.size(); ++i) {
                const auto& hv = out[i].h.values();
                const auto& hb = base_out[i].h.values();
                for (std::size_t k = 0; k < hv.size(); ++k)
                    rep.max_h_dev = std::max(rep.max_h_dev, std::abs(hv[k] - hb[k]));

                Vec3 mu_moved = net_detail::vec3_of(out[i].mu);
                Vec3 mu_expect = motion.apply(net_detail::vec3_of(base_out[i].mu));
                rep.max_mu_dev = std::max({rep.max_mu_dev, std::abs(mu_moved.x - mu_expect.x),
                                           std::abs(mu_moved.y - mu_expect.y),
                                           std::abs(mu_moved.z - mu_expect.z)});

                Mat3 sig_moved = net_detail::mat3_of(out[i].sigma);
                Mat3 sig_expect = motion.rot.conjugate(net_detail::mat3_of(base_out[i].sigma));
                rep.max_sigma_dev =
                    std::max(rep.max_sigma_dev, (sig_moved - sig_expect).max_abs());
            }
        }
    }
    return rep;
}

// --------------------------------------------------------------------- moments

struct MomentsPairReport {
    DistanceMoments standard;
    DistanceMoments linear_trace;
    McDistanceMoments mc;
    double z_mean = 0.0;          // (analytic mean - MC mean) / SE
    double z_var_standard = 0.0;  // Standard-mode variance vs MC
    double z_var_linear = 0.0;    // LinearTrace-mode variance vs MC
};

struct MomentsReport {
    std::size_t n_samples = 0;
    double z_tolerance = 4.0;
    std::vector<MomentsPairReport> pairs;

    double max_abs_z_standard() const {
        double z = 0.0;
        for (const auto& p : pairs)
            z = std::max({z, std::abs(p.z_mean), std::abs(p.z_var_standard)});
        return z;
    }
    double max_abs_z_linear() const {
        double z = 0.0;
        for (const auto& p : pairs) z = std::max(z, std::abs(p.z_var_linear));
        return z;
    }
    bool pass() const { return max_abs_z_standard() <= z_tolerance; }
    bool linear_trace_matches() const { return max_abs_z_linear() <= z_tolerance; }

    std::string summary() const {
        std::ostringstream os;
        os << "moments: " << pairs.size() << " pairs x " << n_samples
           << " samples; max |z| standard=" << max_abs_z_standard()
           << ", linear-trace=" << max_abs_z_linear() << " (tol " << z_tolerance << "); "
           << "linear-trace matches MC: " << (linear_trace_matches() ? "yes" : "no");
        return os.str();
    }
};

inline GaussianPDC random_check_pdc(Rng& rng) {
    Vec3 mean{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
    Rotation q = random_rotation(rng);
    Mat3 d = Mat3::diag(rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0));
    return GaussianPDC{mean, q.conjugate(d)}.validated();
}

// Compares both closed-form variance modes of the squared pairwise
// distance against an independent two-point Monte Carlo estimate.
inline MomentsReport run_moments_suite(std::uint64_t seed, int n_pairs = 20,
                                       std::size_t n_samples = 10'000'000,
                                       double z_tolerance = 4.0) {
    MomentsReport rep;
    rep.n_samples = n_samples;
    rep.z_tolerance = z_tolerance;
    Rng rng(seed);
    for (int i = 0; i < n_pairs; ++i) {
        GaussianPDC a = random_check_pdc(rng);
        GaussianPDC b = random_check_pdc(rng);
        MomentsPairReport pr;
        pr.standard = squared_distance_moments(a, b, DistanceFormula::Standard);
        pr.linear_trace = squared_distance_moments(a, b, DistanceFormula::LinearTrace);
        pr.mc = mc_squared_distance_moments_detail(a, b, n_samples, rng.next_u64());
        pr.z_mean = (pr.standard.mean - pr.mc.mean) / pr.mc.se_mean;
        pr.z_var_standard = (pr.standard.variance - pr.mc.variance) / pr.mc.se_variance;
        pr.z_var_linear = (pr.linear_trace.variance - pr.mc.variance) / pr.mc.se_variance;
        rep.pairs.push_back(pr);
    }
    return rep;
}

// ------------------------------------------------------------------- gradients

struct GradientGroupReport {
    std::string group;
    int n_checked = 0;
    double max_rel_err = 0.0;
};

struct GradientReport {
    int n_instances = 0;
    double tolerance = 1e-4;
    std::vector<GradientGroupReport> groups;

    double max_rel_err() const {
        double e = 0.0;
        for (const auto& g : groups) e = std::max(e, g.max_rel_err);
        return e;
    }
    bool pass() const { return max_rel_err() < tolerance; }

    std::string summary() const {
        std::ostringstream os;
        os << "gradients: " << n_instances << " instances; max rel err";
        for (const auto& g : groups) os << " " << g.group << "=" << g.max_rel_err;
        os << " (tol " << tolerance << ")";
        return os.str();
    }
};

namespace check_detail {

inline std::string param_group(const std::string& name) {
    if (name.rfind("encoder.", 0) == 0) return "encoder";
    if (name.rfind("refiner.", 0) == 0) return "refiner";
    if (name.rfind("head.", 0) == 0) return "head";
    if (name == "type_embedding") return "type_embedding";
    if (name == "var_embedding") return "var_embedding";
    return "other";
}

inline double fd_rel_err(double analytic, double numeric) {
    double diff = std::abs(analytic - numeric);
    if (diff < 1e-8) return 0.0;
    return diff / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

}  // namespace check_detail

// Central finite differences of the full joint training loss against the
// reverse-mode gradients, sampling coordinates from every parameter tensor.
// Single recycle so the adjacency cannot flip under perturbation.
inline GradientReport run_gradient_suite(std::uint64_t seed, int n_instances = 5,
                                         int coords_per_tensor = 6, double tolerance = 1e-4) {
    GradientReport rep;
    rep.n_instances = n_instances;
    rep.tolerance = tolerance;
    std::map<std::string, GradientGroupReport> groups;
    for (const char* g : {"encoder", "refiner", "head", "type_embedding", "var_embedding"})
        groups[g] = {g, 0, 0.0};

    for (int inst = 0; inst < n_instances; ++inst) {
        std::uint64_t s = seed + static_cast<std::uint64_t>(inst) * 7771;
        ModelConfig mcfg;
        mcfg.node_width = 26;
        mcfg.encoder_layers = 1;
        mcfg.refiner_layers = 1;
        mcfg.knn_k = 4;
        ModelParams params = ModelParams::init(mcfg, s);

        PipelineConfig cfg;
        cfg.k_recycles = 1;
        cfg.lambda = 0.7;
        cfg.mask_left = 1;
        cfg.mask_right = 1;
        cfg.variance_kind = VarianceInit::Kind::Learnable;

        Complex wt = synthetic_two_chain(s ^ 0x77ULL, 5);
        Rng rec_rng(s ^ 0x99ULL);
        const Residue& site = wt.residues[3];
        AminoAcid mt = site.aa;
        while (mt == site.aa)
            mt = static_cast<AminoAcid>(rec_rng.uniform_int(kNumAminoAcids));
        MutationRecord rec;
        rec.structure_id = "g";
        rec.mutations = {Mutation{site.aa, site.chain_id, site.seq_number, ' ', mt}};
        rec.ddg = rec_rng.uniform(-2.0, 2.0);

        // The mutant branch is refined without gradients, so for the
        // comparison it is computed once at the base parameters and held
        // fixed; finite differences then probe exactly the declared graph.
        std::uint64_t wt_seed = s ^ 0x1111ULL, mt_seed = s ^ 0x2222ULL;
        Complex mt_refined = refined_mutant_nograd(wt, rec, params, cfg, mt_seed);
        auto loss_value = [&]() {
            ad::NoGradGuard guard;
            SampleLosses l = sample_losses_with_mutant(wt, rec, mt_refined, params, cfg, wt_seed);
            return l.ddg.value() + cfg.lambda * l.refine.value();
        };

        params.store.zero_grad();
        {
            SampleLosses l = sample_losses_with_mutant(wt, rec, mt_refined, params, cfg, wt_seed);
            ad::Tensor total = ad::add(l.ddg, ad::mul(l.refine, cfg.lambda));
            ad::backward(total);
        }

        Rng pick(s ^ 0x5151ULL);
        for (auto& [name, tensor] : params.store.params) {
            std::string g = check_detail::param_group(name);
            auto git = groups.find(g);
            if (git == groups.end()) continue;
            std::vector<std::size_t> coords;
            std::size_t argmax = 0;
            double gmax = -1.0;
            for (std::size_t k = 0; k < tensor.size(); ++k)
                if (std::abs(tensor.grad()[k]) > gmax) {
                    gmax = std::abs(tensor.grad()[k]);
                    argmax = k;
                }
            coords.push_back(argmax);  // strongest path through this tensor
            for (int rep_i = 1; rep_i < coords_per_tensor; ++rep_i)
                coords.push_back(
                    static_cast<std::size_t>(pick.uniform_int(static_cast<int>(tensor.size()))));
            for (std::size_t k : coords) {
                double analytic = tensor.grad()[k];
                double h = 1e-4;
                double orig = tensor.values()[k];
                tensor.values_mut()[k] = orig + h;
                double up = loss_value();
                tensor.values_mut()[k] = orig - h;
                double down = loss_value();
                tensor.values_mut()[k] = orig;
                double numeric = (up - down) / (2.0 * h);
                git->second.max_rel_err =
                    std::max(git->second.max_rel_err, check_detail::fd_rel_err(analytic, numeric));
                ++git->second.n_checked;
            }
        }
    }
    for (auto& [g, gr] : groups) rep.groups.push_back(gr);
    return rep;
}

}  // namespace refineppi
