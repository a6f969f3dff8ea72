#pragma once
/*
pdc_net.hpp
-----------
The probability-density-cloud network. Every residue carries an
invariant feature vector h, a mean position mu, and a covariance Sigma;
message passing consumes only rigid-motion-invariant moments of the
pairwise difference distributions, updates mu along difference vectors,
and grows Sigma by PSD combinations, so h is invariant while (mu, Sigma)
transform like points and bilinear forms.
*/

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "geom.hpp"
#include "optim.hpp"
#include "structure.hpp"

namespace refineppi {

using ad::Tensor;

// Sigma update rule: Additive adds PSD-weighted neighbor combinations and
// is PSD by construction; Blend rescales Sigma_i and mixes raw phi_mu
// weights, then symmetrizes and clamps eigenvalues at zero.
enum class VarianceRule { Additive, Blend };

struct ModelConfig {
    int node_width = 128;
    int encoder_layers = 1;
    int refiner_layers = 1;
    int knn_k = 8;
    DistanceFormula formula = DistanceFormula::Standard;
    VarianceRule variance_rule = VarianceRule::Additive;

    int embedding_dim() const {
        int d = node_width - (kNumAminoAcids + 3);
        if (d <= 0)
            throw std::invalid_argument("ModelConfig: node_width must exceed " +
                                        std::to_string(kNumAminoAcids + 3));
        return d;
    }
};

struct MlpParams {
    Tensor w0, b0, w1, b1, w2, b2;

    std::vector<Tensor> all() const { return {w0, b0, w1, b1, w2, b2}; }
};

// Two hidden layers with the smooth x*sigmoid(x) nonlinearity; the output
// is linear unless `softplus_out` constrains it to be positive.
inline Tensor mlp_forward(const MlpParams& p, const Tensor& in, bool softplus_out = false) {
    Tensor h = ad::silu(ad::add(ad::matmul(p.w0, in), p.b0));
    h = ad::silu(ad::add(ad::matmul(p.w1, h), p.b1));
    Tensor out = ad::add(ad::matmul(p.w2, h), p.b2);
    return softplus_out ? ad::softplus(out) : out;
}

struct PdcLayerParams {
    MlpParams phi_e;      // edge message, output = node width
    MlpParams phi_h;      // node feature update
    MlpParams phi_mu;     // scalar mean-update weight
    MlpParams phi_sigma;  // scalar covariance weight, softplus constrained
};

struct NodeState {
    Tensor h;      // (width)
    Tensor mu;     // (3)
    Tensor sigma;  // (3,3), symmetric PSD
};

namespace net_detail {

inline std::vector<double> glorot(Rng& rng, std::size_t fan_out, std::size_t fan_in) {
    double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(fan_in * fan_out);
    for (auto& x : v) x = rng.uniform(-s, s);
    return v;
}

inline MlpParams init_mlp(ParamStore& store, const std::string& prefix, std::size_t in,
                          std::size_t hidden, std::size_t out, Rng& rng,
                          double out_bias = 0.0) {
    MlpParams p;
    p.w0 = store.add(prefix + ".w0", Tensor::param({hidden, in}, glorot(rng, hidden, in)));
    p.b0 = store.add(prefix + ".b0", Tensor::param({hidden}, std::vector<double>(hidden, 0.0)));
    p.w1 = store.add(prefix + ".w1", Tensor::param({hidden, hidden}, glorot(rng, hidden, hidden)));
    p.b1 = store.add(prefix + ".b1", Tensor::param({hidden}, std::vector<double>(hidden, 0.0)));
    p.w2 = store.add(prefix + ".w2", Tensor::param({out, hidden}, glorot(rng, out, hidden)));
    p.b2 = store.add(prefix + ".b2", Tensor::param({out}, std::vector<double>(out, out_bias)));
    return p;
}

inline PdcLayerParams init_layer(ParamStore& store, const std::string& prefix, int width,
                                 Rng& rng) {
    std::size_t w = static_cast<std::size_t>(width);
    PdcLayerParams p;
    p.phi_e = init_mlp(store, prefix + ".phi_e", 2 * w + 2, w, w, rng);
    p.phi_h = init_mlp(store, prefix + ".phi_h", 2 * w, w, w, rng);
    p.phi_mu = init_mlp(store, prefix + ".phi_mu", w, w, 1, rng);
    // Start the covariance growth gate small: softplus(-3) ~ 0.05.
    p.phi_sigma = init_mlp(store, prefix + ".phi_sigma", w, w, 1, rng, -3.0);
    return p;
}

inline Tensor onehot_row(int index, int n) {
    std::vector<double> v(static_cast<std::size_t>(n), 0.0);
    v[static_cast<std::size_t>(index)] = 1.0;
    return Tensor::constant({1, static_cast<std::size_t>(n)}, std::move(v));
}

// Diagonal (3,3) tensor from three scalar entries of a (1,3) tensor.
inline Tensor diag_from_row(const Tensor& row) {
    static const double basis[3][9] = {
        {1, 0, 0, 0, 0, 0, 0, 0, 0},
        {0, 0, 0, 0, 1, 0, 0, 0, 0},
        {0, 0, 0, 0, 0, 0, 0, 0, 1},
    };
    Tensor out;
    for (int k = 0; k < 3; ++k) {
        std::vector<double> pick(3, 0.0);
        pick[static_cast<std::size_t>(k)] = 1.0;
        Tensor select = Tensor::constant({1, 3}, pick);
        Tensor entry = ad::dot(row, select);
        Tensor bk = Tensor::constant({3, 3}, std::vector<double>(basis[k], basis[k] + 9));
        Tensor term = ad::mul(entry, bk);
        out = out.defined() ? ad::add(out, term) : term;
    }
    return out;
}

inline Tensor mat3_constant(const Mat3& m) {
    return Tensor::constant({3, 3}, std::vector<double>(m.m.begin(), m.m.end()));
}

inline Tensor vec3_constant(const Vec3& v) {
    return Tensor::constant({3}, {v.x, v.y, v.z});
}

inline Vec3 vec3_of(const Tensor& t) {
    return {t.values()[0], t.values()[1], t.values()[2]};
}

inline Mat3 mat3_of(const Tensor& t) {
    Mat3 m;
    for (int i = 0; i < 9; ++i) m.m[static_cast<std::size_t>(i)] = t.values()[static_cast<std::size_t>(i)];
    return m;
}

}  // namespace net_detail

struct ModelParams {
    ModelConfig cfg;
    Tensor type_embedding;  // (20, width-23)
    std::vector<PdcLayerParams> encoder;
    std::vector<PdcLayerParams> refiner;
    Tensor head_w;          // (1, 2*width)
    Tensor head_b;          // (1)
    Tensor var_embedding;   // (20, 3), pre-softplus diagonal variances
    ParamStore store;

    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
        ModelParams p;
        p.cfg = cfg;
        Rng rng(seed ^ 0x5eedULL);
        std::size_t w = static_cast<std::size_t>(cfg.node_width);
        std::size_t ed = static_cast<std::size_t>(cfg.embedding_dim());
        p.type_embedding = p.store.add(
            "type_embedding",
            Tensor::param({static_cast<std::size_t>(kNumAminoAcids), ed},
                          net_detail::glorot(rng, static_cast<std::size_t>(kNumAminoAcids), ed)));
        for (int l = 0; l < cfg.encoder_layers; ++l)
            p.encoder.push_back(net_detail::init_layer(p.store, "encoder.L" + std::to_string(l),
                                                       cfg.node_width, rng));
        for (int l = 0; l < cfg.refiner_layers; ++l)
            p.refiner.push_back(net_detail::init_layer(p.store, "refiner.L" + std::to_string(l),
                                                       cfg.node_width, rng));
        p.head_w = p.store.add("head.w", Tensor::param({1, 2 * w}, net_detail::glorot(rng, 1, 2 * w)));
        p.head_b = p.store.add("head.b", Tensor::param({1}, {0.0}));
        p.var_embedding = p.store.add(
            "var_embedding",
            Tensor::param({static_cast<std::size_t>(kNumAminoAcids), 3},
                          std::vector<double>(static_cast<std::size_t>(kNumAminoAcids) * 3, 0.0)));
        return p;
    }

    std::set<std::string> encoder_and_refiner_names() const {
        std::set<std::string> names;
        for (const auto& [name, t] : store.params)
            if (name.rfind("encoder.", 0) == 0 || name.rfind("refiner.", 0) == 0 ||
                name == "type_embedding")
                names.insert(name);
        return names;
    }
};

// Per-residue input features: one-hot amino acid (zeroed when the identity
// is hidden), one-hot chain group, a masked flag, and a learned
// residue-type embedding row. Total length = node width.
inline std::vector<Tensor> initial_features(const Complex& c, const std::set<int>& masked,
                                            const Tensor& type_embedding,
                                            const std::set<int>& hidden = {}) {
    std::vector<Tensor> out;
    out.reserve(c.residues.size());
    for (std::size_t i = 0; i < c.residues.size(); ++i) {
        const Residue& r = c.residues[i];
        int idx = static_cast<int>(i);
        bool is_hidden = hidden.count(idx) > 0;
        Tensor onehot = is_hidden
                            ? Tensor::zeros({1, static_cast<std::size_t>(kNumAminoAcids)})
                            : net_detail::onehot_row(aa_index(r.aa), kNumAminoAcids);
        bool ligand = c.group_of(idx) == ChainGroup::Ligand;
        Tensor group = Tensor::constant({2}, {ligand ? 1.0 : 0.0, ligand ? 0.0 : 1.0});
        Tensor flag = Tensor::scalar(masked.count(idx) ? 1.0 : 0.0);
        Tensor emb = ad::matmul(onehot, type_embedding);
        out.push_back(ad::concat({onehot, group, flag, emb}));
    }
    return out;
}

// Initial covariance strategy for every node.
struct VarianceInit {
    enum class Kind { Identity, FromRmsf, Learnable };
    Kind kind = Kind::Identity;
    std::vector<double> rmsf;  // per residue, FromRmsf only

    static VarianceInit identity() { return {}; }
    static VarianceInit from_rmsf(std::vector<double> r) {
        VarianceInit v;
        v.kind = Kind::FromRmsf;
        v.rmsf = std::move(r);
        return v;
    }
    static VarianceInit learnable() {
        VarianceInit v;
        v.kind = Kind::Learnable;
        return v;
    }
};

inline std::vector<Tensor> make_initial_sigmas(const Complex& c, const VarianceInit& vinit,
                                               const Tensor& var_embedding) {
    std::vector<Tensor> out;
    out.reserve(c.residues.size());
    switch (vinit.kind) {
        case VarianceInit::Kind::Identity:
            for (std::size_t i = 0; i < c.residues.size(); ++i)
                out.push_back(net_detail::mat3_constant(Mat3::identity()));
            break;
        case VarianceInit::Kind::FromRmsf: {
            if (vinit.rmsf.size() != c.residues.size())
                throw std::invalid_argument("VarianceInit: rmsf size " +
                                            std::to_string(vinit.rmsf.size()) +
                                            " does not match residue count " +
                                            std::to_string(c.residues.size()));
            for (double f : vinit.rmsf)
                out.push_back(net_detail::mat3_constant(Mat3::isotropic(f * f)));
            break;
        }
        case VarianceInit::Kind::Learnable:
            for (const Residue& r : c.residues) {
                Tensor row = ad::matmul(net_detail::onehot_row(aa_index(r.aa), kNumAminoAcids),
                                        var_embedding);
                out.push_back(net_detail::diag_from_row(ad::softplus(row)));
            }
            break;
    }
    return out;
}

// Invariant scalars of the pairwise difference distribution: mean and
// variance of the squared distance, built from tensors so gradients flow
// into both means and covariances.
inline std::pair<Tensor, Tensor> distance_moment_features(const NodeState& a, const NodeState& b,
                                                          DistanceFormula formula) {
    Tensor s = ad::add(a.sigma, b.sigma);
    Tensor m = ad::sub(a.mu, b.mu);
    Tensor mean = ad::add(ad::trace(s), ad::sq_norm(m));
    Tensor quad = ad::dot(m, ad::matmul(s, m));
    Tensor variance = (formula == DistanceFormula::Standard)
                          ? ad::add(ad::mul(ad::trace(ad::matmul(s, s)), 2.0), ad::mul(quad, 4.0))
                          : ad::add(ad::mul(ad::trace(s), 2.0), ad::mul(quad, 4.0));
    return {mean, variance};
}

namespace net_detail {

// Symmetrize and clamp eigenvalues at zero, as a straight-through value
// correction: the projection adjusts values only, gradients pass to the
// unprojected matrix. Exact identity whenever the input is already PSD.
inline Tensor psd_project(const Tensor& sigma) {
    Mat3 raw = mat3_of(sigma);
    Mat3 sym = raw.symmetrized();
    if (sym.min_eigenvalue() >= 0.0 && (sym - raw).max_abs() == 0.0) return sigma;
    Mat3 proj = sym.clamped_psd(0.0);
    Mat3 delta = proj - raw;
    return ad::add(sigma, mat3_constant(delta));
}

}  // namespace net_detail

// One message-passing layer. For each node i with neighbors N(i):
//   m_ij   = phi_e(h_i, h_j, log1p(mean_dij), log1p(var_dij))
// The squared-distance moments grow like the fourth power of the spatial
// extent, so they enter the edge MLP log-compressed; without that the
// stack overflows on desk-size complexes.
//   h_i'   = phi_h(h_i, sum_j m_ij)              (unnormalized sum)
//   mu_i'  = mu_i + (1/|N|) sum_j (mu_i - mu_j) phi_mu(m_ij)
//   Additive:   Sigma_i' = Sigma_i + (1/|N|) sum_j (Sigma_i + Sigma_j) phi_sigma(m_ij)
//   Blend: Sigma_i' = (1 + (1/|N|) sum_j phi_mu(m_ij))^2 Sigma_i
//                              + (1/|N|) sum_j phi_mu(m_ij) Sigma_j, then PSD projection.
// Nodes without neighbors pass through unchanged.
inline std::vector<NodeState> pdc_layer(const std::vector<NodeState>& states,
                                        const std::vector<std::vector<int>>& neighbors,
                                        const PdcLayerParams& params, VarianceRule rule,
                                        DistanceFormula formula) {
    if (states.size() != neighbors.size())
        throw std::invalid_argument("pdc_layer: adjacency size mismatch");
    std::vector<NodeState> out;
    out.reserve(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
        const auto& nbrs = neighbors[i];
        if (nbrs.empty()) {
            out.push_back(states[i]);
            continue;
        }
        const NodeState& si = states[i];
        double inv_n = 1.0 / static_cast<double>(nbrs.size());

        Tensor msg_sum, mu_acc, sig_acc, w_acc, wsig_acc;
        for (int j : nbrs) {
            const NodeState& sj = states[static_cast<std::size_t>(j)];
            auto [dmean, dvar] = distance_moment_features(si, sj, formula);
            Tensor m = mlp_forward(params.phi_e,
                                   ad::concat({si.h, sj.h, ad::log1p(dmean), ad::log1p(dvar)}));
            msg_sum = msg_sum.defined() ? ad::add(msg_sum, m) : m;

            Tensor w_mu = mlp_forward(params.phi_mu, m);
            Tensor mu_term = ad::mul(w_mu, ad::sub(si.mu, sj.mu));
            mu_acc = mu_acc.defined() ? ad::add(mu_acc, mu_term) : mu_term;

            if (rule == VarianceRule::Additive) {
                Tensor w_sig = mlp_forward(params.phi_sigma, m, /*softplus_out=*/true);
                Tensor sig_term = ad::mul(w_sig, ad::add(si.sigma, sj.sigma));
                sig_acc = sig_acc.defined() ? ad::add(sig_acc, sig_term) : sig_term;
            } else {
                w_acc = w_acc.defined() ? ad::add(w_acc, w_mu) : w_mu;
                Tensor wsig_term = ad::mul(w_mu, sj.sigma);
                wsig_acc = wsig_acc.defined() ? ad::add(wsig_acc, wsig_term) : wsig_term;
            }
        }

        NodeState ns;
        ns.h = mlp_forward(params.phi_h, ad::concat({si.h, msg_sum}));
        ns.mu = ad::add(si.mu, ad::mul(mu_acc, inv_n));
        if (rule == VarianceRule::Additive) {
            ns.sigma = ad::add(si.sigma, ad::mul(sig_acc, inv_n));
        } else {
            Tensor scale = ad::add(Tensor::scalar(1.0), ad::mul(w_acc, inv_n));
            Tensor first = ad::mul(ad::mul(scale, scale), si.sigma);
            Tensor second = ad::mul(wsig_acc, inv_n);
            ns.sigma = net_detail::psd_project(ad::add(first, second));
        }
        out.push_back(ns);
    }
    return out;
}

inline std::vector<NodeState> run_stack(std::vector<NodeState> states,
                                        const std::vector<std::vector<int>>& neighbors,
                                        const std::vector<PdcLayerParams>& layers,
                                        VarianceRule rule, DistanceFormula formula) {
    for (const auto& layer : layers) states = pdc_layer(states, neighbors, layer, rule, formula);
    return states;
}

// Assembles node states from a complex: features from types/groups/flags,
// means from the supplied position tensors (CA constants by default), and
// covariances from the chosen initialization.
inline std::vector<NodeState> make_states(const Complex& c, const std::vector<Tensor>& mu,
                                          const std::set<int>& masked, const ModelParams& params,
                                          const VarianceInit& vinit,
                                          const std::set<int>& hidden = {}) {
    if (mu.size() != c.residues.size())
        throw std::invalid_argument("make_states: position count mismatch");
    std::vector<Tensor> h = initial_features(c, masked, params.type_embedding, hidden);
    std::vector<Tensor> sigmas = make_initial_sigmas(c, vinit, params.var_embedding);
    std::vector<NodeState> states(c.residues.size());
    for (std::size_t i = 0; i < states.size(); ++i)
        states[i] = NodeState{h[i], mu[i], sigmas[i]};
    return states;
}

inline std::vector<Tensor> ca_constants(const Complex& c) {
    std::vector<Tensor> mu;
    mu.reserve(c.residues.size());
    for (const auto& r : c.residues) mu.push_back(net_detail::vec3_constant(r.ca()));
    return mu;
}

inline std::vector<Vec3> mu_values(const std::vector<Tensor>& mu) {
    std::vector<Vec3> out;
    out.reserve(mu.size());
    for (const auto& t : mu) out.push_back(net_detail::vec3_of(t));
    return out;
}

// Full encoder pass over a complex at rest: adjacency from current CA
// positions, then the encoder stack.
inline std::vector<NodeState> encode(const Complex& c, const std::set<int>& masked,
                                     const ModelParams& params, const VarianceInit& vinit) {
    std::vector<Tensor> mu = ca_constants(c);
    EdgeSet edges = build_edges(mu_values(mu), c.residue_groups(), params.cfg.knn_k);
    auto states = make_states(c, mu, masked, params, vinit);
    return run_stack(std::move(states), edges.neighbors, params.encoder, params.cfg.variance_rule,
                     params.cfg.formula);
}

// Column-wise mean of the per-residue feature vectors.
inline Tensor pool(const std::vector<NodeState>& states) {
    if (states.empty()) throw std::invalid_argument("pool: no nodes");
    Tensor acc = states[0].h;
    for (std::size_t i = 1; i < states.size(); ++i) acc = ad::add(acc, states[i].h);
    return ad::mul(acc, 1.0 / static_cast<double>(states.size()));
}

}  // namespace refineppi
