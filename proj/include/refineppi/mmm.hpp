#pragma once
/*
mmm.hpp
-------
Mask-mutation-modeling: mutation-centered mask windows (clipped at chain
boundaries, unioned across mutations), two corruption modes for the
masked region (i.i.d. Gaussian noise, or linear interpolation between
the flanking anchor residues with one-sided extrapolation at chain
ends), and the Huber refinement loss over the masked region.
*/

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

#include "autodiff.hpp"
#include "geom.hpp"
#include "structure.hpp"

namespace refineppi {

struct MaskRegion {
    std::vector<int> indices;  // global residue indices, sorted ascending

    bool contains(int idx) const {
        return std::binary_search(indices.begin(), indices.end(), idx);
    }
    std::set<int> as_set() const { return {indices.begin(), indices.end()}; }
    bool empty() const { return indices.empty(); }
    std::size_t size() const { return indices.size(); }
};

// Window [pos-l, pos+r] in chain-sequence positions, clipped at the
// chain boundary.
inline MaskRegion mask_window(const Complex& c, char chain, int chain_pos, int l, int r) {
    if (l < 0 || r < 0) throw std::invalid_argument("mask_window: negative window size");
    std::vector<int> order = c.chain_order(chain);
    if (order.empty())
        throw std::invalid_argument(std::string("mask_window: no residues in chain ") + chain);
    if (chain_pos < 0 || chain_pos >= static_cast<int>(order.size()))
        throw std::invalid_argument("mask_window: seed position out of range");
    int lo = std::max(0, chain_pos - l);
    int hi = std::min(static_cast<int>(order.size()) - 1, chain_pos + r);
    MaskRegion region;
    for (int p = lo; p <= hi; ++p) region.indices.push_back(order[static_cast<std::size_t>(p)]);
    std::sort(region.indices.begin(), region.indices.end());
    return region;
}

// Windows around every mutation site, unioned over mutations.
inline MaskRegion select_mask_region(const Complex& c, const std::vector<Mutation>& muts,
                                     int l = 5, int r = 5) {
    if (muts.empty()) throw std::invalid_argument("select_mask_region: no mutations");
    std::set<int> acc;
    for (const Mutation& m : muts) {
        int idx = c.find_residue(m.chain_id, m.seq_number, m.icode);
        if (idx < 0)
            throw std::invalid_argument(std::string("select_mask_region: no residue ") +
                                        m.chain_id + std::to_string(m.seq_number));
        const Residue& res = c.residues[static_cast<std::size_t>(idx)];
        if (res.aa != m.wt_aa)
            throw std::invalid_argument("select_mask_region: wild-type mismatch at " + res.label());
        std::vector<int> order = c.chain_order(m.chain_id);
        int pos = -1;
        for (std::size_t p = 0; p < order.size(); ++p)
            if (order[p] == idx) pos = static_cast<int>(p);
        MaskRegion w = mask_window(c, m.chain_id, pos, l, r);
        acc.insert(w.indices.begin(), w.indices.end());
    }
    MaskRegion region;
    region.indices.assign(acc.begin(), acc.end());
    return region;
}

enum class CorruptionKind { Noise, Interpolate };

struct CorruptionMode {
    CorruptionKind kind = CorruptionKind::Interpolate;
    double alpha = 0.5;  // per-axis noise std, Angstrom (Noise mode)

    static CorruptionMode noise(double alpha = 0.5) { return {CorruptionKind::Noise, alpha}; }
    static CorruptionMode interpolate() { return {CorruptionKind::Interpolate, 0.0}; }
};

// Adds i.i.d. Gaussian noise (per-axis std alpha) to every backbone atom
// of every residue in the region. Deterministic per seed: residues are
// visited in ascending index order, atoms in N, CA, C, O, CB order.
inline Complex corrupt_noise(const Complex& c, const MaskRegion& region, double alpha,
                             std::uint64_t seed) {
    if (region.empty()) throw std::invalid_argument("corrupt_noise: empty mask region");
    if (alpha < 0.0) throw std::invalid_argument("corrupt_noise: negative noise scale");
    Complex out = c;
    Rng rng(seed);
    for (int idx : region.indices) {
        Residue& res = out.residues[static_cast<std::size_t>(idx)];
        for (int a = 0; a < kNumBackboneAtoms; ++a) {
            auto& atom = res.atoms[static_cast<std::size_t>(a)];
            if (!atom) continue;
            *atom += rng.normal_vec3() * alpha;
        }
    }
    return out;
}

namespace mmm_detail {

struct Segment {
    char chain = ' ';
    std::vector<int> members;  // global indices in chain-position order
    // Chain positions of the flanking anchors; -1 when absent.
    int left_anchor = -1;    // global index of residue at pos-1
    int left_anchor2 = -1;   // at pos-2
    int right_anchor = -1;   // at pos+len
    int right_anchor2 = -1;  // at pos+len+1
};

inline std::vector<Segment> segments(const Complex& c, const MaskRegion& region) {
    std::vector<Segment> out;
    for (char chain : c.chain_ids()) {
        std::vector<int> order = c.chain_order(chain);
        std::size_t p = 0;
        while (p < order.size()) {
            if (!region.contains(order[p])) {
                ++p;
                continue;
            }
            Segment seg;
            seg.chain = chain;
            std::size_t start = p;
            while (p < order.size() && region.contains(order[p])) {
                seg.members.push_back(order[p]);
                ++p;
            }
            if (start >= 1) seg.left_anchor = order[start - 1];
            if (start >= 2) seg.left_anchor2 = order[start - 2];
            if (p < order.size()) seg.right_anchor = order[p];
            if (p + 1 < order.size()) seg.right_anchor2 = order[p + 1];
            out.push_back(std::move(seg));
        }
    }
    return out;
}

// Anchor position for one atom channel; anchors missing that atom fall
// back to their CA.
inline Vec3 anchor_atom(const Complex& c, int idx, int channel) {
    const Residue& r = c.residues[static_cast<std::size_t>(idx)];
    const auto& a = r.atoms[static_cast<std::size_t>(channel)];
    if (a) return *a;
    return r.ca();
}

}  // namespace mmm_detail

// Replaces masked coordinates with straight-line placements between the
// segment anchors, per backbone-atom channel:
//   both anchors:  x_t = A + (t+1) (B - A) / (L + 1), t = 0..L-1
//   no left:       x_t = B - s (B2 - B), s = distance to the right anchor
//   no right:      x_t = A + (t+1) (A - A2)
// where A, B are the residues immediately outside the segment and A2, B2
// sit one position further. A segment spanning a whole chain, or missing
// the second anchor needed for extrapolation, is an error.
inline Complex corrupt_interpolate(const Complex& c, const MaskRegion& region) {
    if (region.empty()) throw std::invalid_argument("corrupt_interpolate: empty mask region");
    Complex out = c;
    for (const auto& seg : mmm_detail::segments(c, region)) {
        const int len = static_cast<int>(seg.members.size());
        const bool has_left = seg.left_anchor >= 0;
        const bool has_right = seg.right_anchor >= 0;
        if (!has_left && !has_right)
            throw std::invalid_argument(std::string("corrupt_interpolate: chain ") + seg.chain +
                                        " is masked entirely; no anchors remain");
        if (!has_left && seg.right_anchor2 < 0)
            throw std::invalid_argument(std::string("corrupt_interpolate: chain ") + seg.chain +
                                        " needs two residues after the masked run to extrapolate");
        if (!has_right && has_left && seg.left_anchor2 < 0)
            throw std::invalid_argument(std::string("corrupt_interpolate: chain ") + seg.chain +
                                        " needs two residues before the masked run to extrapolate");
        for (int t = 0; t < len; ++t) {
            Residue& res = out.residues[static_cast<std::size_t>(seg.members[static_cast<std::size_t>(t)])];
            for (int ch = 0; ch < kNumBackboneAtoms; ++ch) {
                auto& atom = res.atoms[static_cast<std::size_t>(ch)];
                if (!atom) continue;
                Vec3 v;
                if (has_left && has_right) {
                    Vec3 a = mmm_detail::anchor_atom(c, seg.left_anchor, ch);
                    Vec3 b = mmm_detail::anchor_atom(c, seg.right_anchor, ch);
                    v = a + (b - a) * (static_cast<double>(t + 1) / static_cast<double>(len + 1));
                } else if (!has_left) {
                    Vec3 b = mmm_detail::anchor_atom(c, seg.right_anchor, ch);
                    Vec3 b2 = mmm_detail::anchor_atom(c, seg.right_anchor2, ch);
                    double s = static_cast<double>(len - t);
                    v = b - (b2 - b) * s;
                } else {
                    Vec3 a = mmm_detail::anchor_atom(c, seg.left_anchor, ch);
                    Vec3 a2 = mmm_detail::anchor_atom(c, seg.left_anchor2, ch);
                    v = a + (a - a2) * static_cast<double>(t + 1);
                }
                *atom = v;
            }
        }
    }
    return out;
}

inline Complex corrupt(const Complex& c, const MaskRegion& region, const CorruptionMode& mode,
                       std::uint64_t seed) {
    if (mode.kind == CorruptionKind::Noise) return corrupt_noise(c, region, mode.alpha, seed);
    return corrupt_interpolate(c, region);
}

// Refinement loss over the masked region: for each masked residue, the
// Huber of the per-atom residual norm averaged over present backbone
// atoms; then the mean over masked residues. Tensor form, so predicted
// positions may carry gradients.
inline ad::Tensor refine_loss(const std::vector<std::array<std::optional<ad::Tensor>, 5>>& pred,
                              const Complex& truth, const MaskRegion& region, double delta = 1.0) {
    if (region.empty()) throw std::invalid_argument("refine_loss: empty mask region");
    if (pred.size() != region.size())
        throw std::invalid_argument("refine_loss: prediction count does not match region size");
    ad::Tensor total;
    for (std::size_t k = 0; k < region.indices.size(); ++k) {
        const Residue& res = truth.residues[static_cast<std::size_t>(region.indices[k])];
        ad::Tensor res_sum;
        int n_atoms = 0;
        for (int ch = 0; ch < kNumBackboneAtoms; ++ch) {
            const auto& true_atom = res.atoms[static_cast<std::size_t>(ch)];
            const auto& pred_atom = pred[k][static_cast<std::size_t>(ch)];
            if (!true_atom) continue;
            if (!pred_atom)
                throw std::invalid_argument("refine_loss: missing prediction for atom " +
                                            std::string(kBackboneAtomNames[ch]) + " of " + res.label());
            ad::Tensor diff = ad::sub(*pred_atom,
                                      ad::Tensor::constant({3}, {true_atom->x, true_atom->y, true_atom->z}));
            ad::Tensor term = ad::huber_norm(diff, delta);
            res_sum = res_sum.defined() ? ad::add(res_sum, term) : term;
            ++n_atoms;
        }
        ad::Tensor res_mean = ad::mul(res_sum, 1.0 / static_cast<double>(n_atoms));
        total = total.defined() ? ad::add(total, res_mean) : res_mean;
    }
    return ad::mul(total, 1.0 / static_cast<double>(region.size()));
}

// Value-level form comparing two structures over the region.
inline double refine_loss_value(const Complex& pred, const Complex& truth, const MaskRegion& region,
                                double delta = 1.0) {
    std::vector<std::array<std::optional<ad::Tensor>, 5>> tensors;
    tensors.reserve(region.size());
    for (int idx : region.indices) {
        const Residue& r = pred.residues[static_cast<std::size_t>(idx)];
        std::array<std::optional<ad::Tensor>, 5> row;
        for (int ch = 0; ch < kNumBackboneAtoms; ++ch) {
            const auto& a = r.atoms[static_cast<std::size_t>(ch)];
            if (a) row[static_cast<std::size_t>(ch)] = ad::Tensor::constant({3}, {a->x, a->y, a->z});
        }
        tensors.push_back(row);
    }
    return refine_loss(tensors, truth, region, delta).value();
}

// Mean CA displacement over the masked region, for recovery evaluation.
inline double masked_ca_error(const Complex& pred, const Complex& truth, const MaskRegion& region) {
    if (region.empty()) throw std::invalid_argument("masked_ca_error: empty mask region");
    double acc = 0.0;
    for (int idx : region.indices) {
        acc += (pred.residues[static_cast<std::size_t>(idx)].ca() -
                truth.residues[static_cast<std::size_t>(idx)].ca())
                   .norm();
    }
    return acc / static_cast<double>(region.size());
}

}  // namespace refineppi
