#pragma once

// Deterministic synthetic complexes for tests, benchmarks, and demos: two
// alpha-helical chains facing each other, random sequences, and an
// analytic binding-change label built from hydropathy and interface
// proximity (rigid-motion invariant by construction).

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "refineppi/geom.hpp"
#include "refineppi/pipeline.hpp"
#include "refineppi/structure.hpp"

namespace refineppi {

// Kyte-Doolittle hydropathy, indexed by alphabetical one-letter order.
inline constexpr double kHydropathy[kNumAminoAcids] = {
    1.8,   // A
    2.5,   // C
    -3.5,  // D
    -3.5,  // E
    2.8,   // F
    -0.4,  // G
    -3.2,  // H
    4.5,   // I
    -3.9,  // K
    3.8,   // L
    1.9,   // M
    -3.5,  // N
    -1.6,  // P
    -3.5,  // Q
    -4.5,  // R
    -0.8,  // S
    -0.7,  // T
    4.2,   // V
    -0.9,  // W
    -1.3,  // Y
};

// Helix shape: alpha-helix-like by default; a gentler twist makes the
// frame of each residue turn less per position, which shrinks how much a
// chord interpolation distorts residue orientation.
struct HelixGeometry {
    double radius = 2.3;
    double turn_deg = 100.0;  // rotation per residue
    double rise = 1.5;        // z step per residue
};

namespace synth_detail {

inline Vec3 helix_ca(int i, double phase, const HelixGeometry& geom) {
    double a = geom.turn_deg * 3.14159265358979323846 / 180.0 * i + phase;
    return {geom.radius * std::cos(a), geom.radius * std::sin(a), geom.rise * i};
}

}  // namespace synth_detail

// Appends one helical chain: CA trace on an ideal helix, remaining
// backbone atoms at fixed offsets in the local (tangent, radial) frame.
// Glycine gets no CB, which keeps that optional branch exercised.
inline void append_helix_chain(Complex& c, char chain, ChainGroup group,
                               const std::vector<AminoAcid>& seq, const Vec3& origin,
                               double phase = 0.0, const HelixGeometry& geom = {}) {
    if (seq.size() < 2) throw std::invalid_argument("append_helix_chain: need >= 2 residues");
    int n = static_cast<int>(seq.size());
    std::vector<Vec3> ca(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        ca[static_cast<std::size_t>(i)] = origin + synth_detail::helix_ca(i, phase, geom);
    for (int i = 0; i < n; ++i) {
        Vec3 prev = ca[static_cast<std::size_t>(std::max(0, i - 1))];
        Vec3 next = ca[static_cast<std::size_t>(std::min(n - 1, i + 1))];
        Vec3 tangent = (next - prev).normalized();
        double a = geom.turn_deg * 3.14159265358979323846 / 180.0 * i + phase;
        Vec3 radial{std::cos(a), std::sin(a), 0.0};
        Vec3 binormal = tangent.cross(radial).normalized();

        Residue r;
        r.chain_id = chain;
        r.seq_number = i + 1;
        r.aa = seq[static_cast<std::size_t>(i)];
        Vec3 x = ca[static_cast<std::size_t>(i)];
        r.atoms[static_cast<std::size_t>(BackboneAtom::N)] = x - tangent * 1.25 + radial * 0.7;
        r.atoms[static_cast<std::size_t>(BackboneAtom::CA)] = x;
        r.atoms[static_cast<std::size_t>(BackboneAtom::C)] = x + tangent * 1.25 + radial * 0.7;
        r.atoms[static_cast<std::size_t>(BackboneAtom::O)] = x + tangent * 1.25 + radial * 1.9;
        if (r.aa != AminoAcid::Gly)
            r.atoms[static_cast<std::size_t>(BackboneAtom::CB)] = x - radial * 1.0 + binormal * 1.0;
        c.residues.push_back(r);
    }
    c.chain_groups[chain] = group;
}

inline std::vector<AminoAcid> random_sequence(Rng& rng, int n) {
    std::vector<AminoAcid> seq;
    seq.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        seq.push_back(static_cast<AminoAcid>(rng.uniform_int(kNumAminoAcids)));
    return seq;
}

// Two facing helices: ligand chain A at the origin, receptor chain B
// shifted off-axis so the closest CA pairs sit a few Angstrom apart.
inline Complex synthetic_two_chain(std::uint64_t seed, int per_chain = 10,
                                   const HelixGeometry& geom = {}) {
    Rng rng(seed);
    Complex c;
    append_helix_chain(c, 'A', ChainGroup::Ligand, random_sequence(rng, per_chain), {0, 0, 0},
                       0.0, geom);
    append_helix_chain(c, 'B', ChainGroup::Receptor, random_sequence(rng, per_chain),
                       {9.0, 0.0, 0.75}, 3.14159265358979323846, geom);
    c.validate();
    return c;
}

// Analytic label: each mutation contributes its hydropathy change weighted
// by how close the site sits to the other chain group. Depends on the
// geometry only through distances, so it is rigid-motion invariant.
inline double analytic_ddg(const Complex& c, const std::vector<Mutation>& muts) {
    if (muts.empty()) throw std::invalid_argument("analytic_ddg: no mutations");
    double acc = 0.0;
    for (const Mutation& m : muts) {
        int idx = c.find_residue(m.chain_id, m.seq_number, m.icode);
        if (idx < 0)
            throw std::invalid_argument(std::string("analytic_ddg: no residue ") + m.chain_id +
                                        std::to_string(m.seq_number));
        const Residue& site = c.residues[static_cast<std::size_t>(idx)];
        if (site.aa != m.wt_aa)
            throw std::invalid_argument("analytic_ddg: wild-type mismatch at " + site.label());
        ChainGroup own = c.group_of(idx);
        double dmin = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c.residues.size(); ++j) {
            if (c.group_of(static_cast<int>(j)) == own) continue;
            dmin = std::min(dmin, (c.residues[j].ca() - site.ca()).norm());
        }
        double weight = 0.25 + 0.75 * std::exp(-dmin / 4.0);
        acc += (kHydropathy[aa_index(m.mt_aa)] - kHydropathy[aa_index(m.wt_aa)]) * weight;
    }
    return 0.4 * acc;
}

struct SyntheticDataset {
    std::map<std::string, Complex> structures;
    std::vector<MutationRecord> records;
};

// A labelled benchmark of two-chain complexes with single-point mutation
// records. Deterministic per seed. `site_margin` keeps mutation sites that
// many positions away from the chain ends, so a masked window around any
// site stays fully anchored for interpolation.
inline SyntheticDataset synthetic_benchmark(int n_complexes, int per_chain,
                                            int records_per_complex, std::uint64_t seed,
                                            int site_margin = 0,
                                            const HelixGeometry& geom = {}) {
    if (n_complexes < 1 || records_per_complex < 1)
        throw std::invalid_argument("synthetic_benchmark: counts must be positive");
    if (site_margin < 0 || 2 * site_margin >= per_chain)
        throw std::invalid_argument("synthetic_benchmark: site_margin leaves no usable sites");
    SyntheticDataset out;
    Rng rng(seed);
    for (int s = 0; s < n_complexes; ++s) {
        std::string id = "SYN" + std::to_string(1000 + s);
        Complex c = synthetic_two_chain(seed * 7919 + static_cast<std::uint64_t>(s) + 1, per_chain,
                                        geom);
        std::set<std::string> used;
        int made = 0;
        while (made < records_per_complex) {
            char chain = rng.uniform_int(2) == 0 ? 'A' : 'B';
            std::vector<int> order = c.chain_order(chain);
            int span = static_cast<int>(order.size()) - 2 * site_margin;
            int idx = order[static_cast<std::size_t>(site_margin + rng.uniform_int(span))];
            const Residue& site = c.residues[static_cast<std::size_t>(idx)];
            AminoAcid mt = static_cast<AminoAcid>(rng.uniform_int(kNumAminoAcids));
            if (mt == site.aa) continue;
            std::string key = std::string(1, chain) + std::to_string(site.seq_number) +
                              std::string(1, aa_to_one_letter(mt));
            if (used.count(key)) continue;
            used.insert(key);
            Mutation m{site.aa, chain, site.seq_number, ' ', mt};
            MutationRecord rec;
            rec.structure_id = id;
            rec.mutations = {m};
            rec.ddg = analytic_ddg(c, rec.mutations);
            out.records.push_back(std::move(rec));
            ++made;
        }
        out.structures.emplace(std::move(id), std::move(c));
    }
    return out;
}

// A per-residue fluctuation target tied to residue type, for fitting the
// learnable covariance channel against something recoverable.
inline std::vector<double> type_linked_rmsf(const Complex& c) {
    std::vector<double> out;
    out.reserve(c.residues.size());
    for (const Residue& r : c.residues) out.push_back(0.8 + 0.15 * aa_index(r.aa));
    return out;
}

}  // namespace refineppi
