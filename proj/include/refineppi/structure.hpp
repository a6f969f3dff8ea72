#pragma once
/*
structure.hpp
-------------
Residue-level protein-protein complex model: canonical amino acids, the
five heavy backbone atoms per residue (CB optional), ligand/receptor
chain grouping, symmetrized k-nearest-neighbor residue graphs on CA
positions, and interface detection.
*/

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "geom.hpp"

namespace refineppi {

enum class AminoAcid : int {
    Ala, Cys, Asp, Glu, Phe, Gly, His, Ile, Lys, Leu,
    Met, Asn, Pro, Gln, Arg, Ser, Thr, Val, Trp, Tyr,
};

inline constexpr int kNumAminoAcids = 20;
inline constexpr const char* kOneLetterCodes = "ACDEFGHIKLMNPQRSTVWY";

inline int aa_index(AminoAcid a) { return static_cast<int>(a); }

inline char aa_to_one_letter(AminoAcid a) { return kOneLetterCodes[aa_index(a)]; }

inline std::optional<AminoAcid> aa_from_one_letter(char c) {
    for (int i = 0; i < kNumAminoAcids; ++i)
        if (kOneLetterCodes[i] == c) return static_cast<AminoAcid>(i);
    return std::nullopt;
}

inline const std::array<std::string, 20>& aa_three_letter_table() {
    static const std::array<std::string, 20> t = {
        "ALA", "CYS", "ASP", "GLU", "PHE", "GLY", "HIS", "ILE", "LYS", "LEU",
        "MET", "ASN", "PRO", "GLN", "ARG", "SER", "THR", "VAL", "TRP", "TYR"};
    return t;
}

inline std::string aa_to_three_letter(AminoAcid a) {
    return aa_three_letter_table()[static_cast<std::size_t>(aa_index(a))];
}

inline std::optional<AminoAcid> aa_from_three_letter(const std::string& s) {
    const auto& t = aa_three_letter_table();
    for (int i = 0; i < kNumAminoAcids; ++i)
        if (t[static_cast<std::size_t>(i)] == s) return static_cast<AminoAcid>(i);
    return std::nullopt;
}

enum class BackboneAtom : int { N = 0, CA = 1, C = 2, O = 3, CB = 4 };
inline constexpr int kNumBackboneAtoms = 5;
inline constexpr const char* kBackboneAtomNames[kNumBackboneAtoms] = {"N", "CA", "C", "O", "CB"};

enum class ChainGroup { Ligand, Receptor };

struct Residue {
    char chain_id = ' ';
    int seq_number = 0;
    char icode = ' ';
    AminoAcid aa = AminoAcid::Ala;
    std::array<std::optional<Vec3>, kNumBackboneAtoms> atoms;

    const std::optional<Vec3>& atom(BackboneAtom a) const {
        return atoms[static_cast<std::size_t>(a)];
    }
    std::optional<Vec3>& atom(BackboneAtom a) { return atoms[static_cast<std::size_t>(a)]; }

    Vec3 ca() const {
        const auto& c = atom(BackboneAtom::CA);
        if (!c) throw std::runtime_error("Residue: missing CA atom");
        return *c;
    }

    bool has_core_backbone() const {
        return atom(BackboneAtom::N) && atom(BackboneAtom::CA) && atom(BackboneAtom::C) &&
               atom(BackboneAtom::O);
    }

    std::string label() const {
        std::string s;
        s += chain_id;
        s += std::to_string(seq_number);
        if (icode != ' ') s += icode;
        return s;
    }
};

struct Mutation {
    AminoAcid wt_aa;
    char chain_id;
    int seq_number;
    char icode = ' ';
    AminoAcid mt_aa;
};

// Two-sided complex. Residue storage order is the file/parse order; the
// positional order along a chain (used for masking windows and
// interpolation anchors) is by (seq_number, icode) and is independent of
// storage order.
struct Complex {
    std::vector<Residue> residues;
    std::map<char, ChainGroup> chain_groups;

    void validate() const {
        bool has_ligand = false, has_receptor = false;
        std::set<std::tuple<char, int, char>> seen;
        for (const auto& r : residues) {
            auto it = chain_groups.find(r.chain_id);
            if (it == chain_groups.end())
                throw std::invalid_argument(std::string("Complex: chain ") + r.chain_id +
                                            " has no ligand/receptor group");
            (it->second == ChainGroup::Ligand ? has_ligand : has_receptor) = true;
            if (!r.has_core_backbone())
                throw std::invalid_argument("Complex: residue " + r.label() +
                                            " is missing a core backbone atom");
            if (!seen.insert({r.chain_id, r.seq_number, r.icode}).second)
                throw std::invalid_argument("Complex: duplicate residue " + r.label());
        }
        if (!has_ligand || !has_receptor)
            throw std::invalid_argument("Complex: both chain groups must be non-empty");
    }

    ChainGroup group_of(int residue_index) const {
        return chain_groups.at(residues[static_cast<std::size_t>(residue_index)].chain_id);
    }

    int find_residue(char chain, int seq, char icode = ' ') const {
        for (std::size_t i = 0; i < residues.size(); ++i) {
            const auto& r = residues[i];
            if (r.chain_id == chain && r.seq_number == seq && r.icode == icode)
                return static_cast<int>(i);
        }
        return -1;
    }

    // Residue indices of one chain sorted by sequence position.
    std::vector<int> chain_order(char chain) const {
        std::vector<int> idx;
        for (std::size_t i = 0; i < residues.size(); ++i)
            if (residues[i].chain_id == chain) idx.push_back(static_cast<int>(i));
        std::sort(idx.begin(), idx.end(), [&](int a, int b) {
            const auto& ra = residues[static_cast<std::size_t>(a)];
            const auto& rb = residues[static_cast<std::size_t>(b)];
            if (ra.seq_number != rb.seq_number) return ra.seq_number < rb.seq_number;
            return ra.icode < rb.icode;
        });
        return idx;
    }

    std::vector<char> chain_ids() const {
        std::vector<char> ids;
        for (const auto& r : residues)
            if (std::find(ids.begin(), ids.end(), r.chain_id) == ids.end())
                ids.push_back(r.chain_id);
        return ids;
    }

    std::vector<Vec3> ca_positions() const {
        std::vector<Vec3> p;
        p.reserve(residues.size());
        for (const auto& r : residues) p.push_back(r.ca());
        return p;
    }

    std::vector<ChainGroup> residue_groups() const {
        std::vector<ChainGroup> g;
        g.reserve(residues.size());
        for (std::size_t i = 0; i < residues.size(); ++i) g.push_back(group_of(static_cast<int>(i)));
        return g;
    }
};

// Ordered residue-index pairs under symmetric closure: (i,j) is present
// iff (j,i) is. Pairs are classified by the groups of their endpoints.
struct EdgeSet {
    std::vector<std::pair<int, int>> internal_ligand;
    std::vector<std::pair<int, int>> internal_receptor;
    std::vector<std::pair<int, int>> cross;
    std::vector<std::vector<int>> neighbors;  // sorted adjacency per node

    std::size_t directed_count() const {
        return internal_ligand.size() + internal_receptor.size() + cross.size();
    }
    std::size_t undirected_count() const { return directed_count() / 2; }
};

// Symmetrized k-nearest-neighbor graph on CA positions. Each node picks
// its k nearest others (ties broken toward the lower index), the union
// of picks is closed symmetrically, and pairs are classified by the
// endpoint groups.
inline EdgeSet build_edges(const std::vector<Vec3>& ca, const std::vector<ChainGroup>& groups,
                           int k) {
    const int n = static_cast<int>(ca.size());
    if (n < 2) throw std::invalid_argument("build_edges: need at least 2 residues");
    if (k < 1) throw std::invalid_argument("build_edges: k must be at least 1");
    if (groups.size() != ca.size())
        throw std::invalid_argument("build_edges: group list size mismatch");

    std::set<std::pair<int, int>> undirected;
    std::vector<std::pair<double, int>> cand;
    cand.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        cand.clear();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            cand.emplace_back((ca[static_cast<std::size_t>(i)] - ca[static_cast<std::size_t>(j)]).norm2(), j);
        }
        std::sort(cand.begin(), cand.end());
        int take = std::min<int>(k, static_cast<int>(cand.size()));
        for (int t = 0; t < take; ++t) {
            int j = cand[static_cast<std::size_t>(t)].second;
            undirected.insert({std::min(i, j), std::max(i, j)});
        }
    }

    EdgeSet es;
    es.neighbors.assign(static_cast<std::size_t>(n), {});
    for (const auto& [a, b] : undirected) {
        auto ga = groups[static_cast<std::size_t>(a)];
        auto gb = groups[static_cast<std::size_t>(b)];
        auto* bucket = (ga == gb) ? (ga == ChainGroup::Ligand ? &es.internal_ligand
                                                              : &es.internal_receptor)
                                  : &es.cross;
        bucket->emplace_back(a, b);
        bucket->emplace_back(b, a);
        es.neighbors[static_cast<std::size_t>(a)].push_back(b);
        es.neighbors[static_cast<std::size_t>(b)].push_back(a);
    }
    for (auto& nb : es.neighbors) std::sort(nb.begin(), nb.end());
    return es;
}

inline EdgeSet build_edges(const Complex& c, int k = 8) {
    return build_edges(c.ca_positions(), c.residue_groups(), k);
}

// Residues whose CA lies within `cutoff` of any CA on the opposite side.
// Returned sorted ascending.
inline std::vector<int> interface_residues(const Complex& c, double cutoff = 8.0) {
    if (cutoff <= 0.0) throw std::invalid_argument("interface_residues: cutoff must be positive");
    const auto ca = c.ca_positions();
    const auto groups = c.residue_groups();
    const int n = static_cast<int>(ca.size());
    std::vector<int> out;
    const double cut2 = cutoff * cutoff;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (groups[static_cast<std::size_t>(i)] == groups[static_cast<std::size_t>(j)]) continue;
            if ((ca[static_cast<std::size_t>(i)] - ca[static_cast<std::size_t>(j)]).norm2() <= cut2) {
                out.push_back(i);
                break;
            }
        }
    }
    return out;
}

// Copy with mutant amino-acid types substituted. Validates that each
// site exists and currently carries the stated wild-type identity.
inline Complex apply_mutations(const Complex& c, const std::vector<Mutation>& muts) {
    Complex out = c;
    for (const Mutation& m : muts) {
        int idx = out.find_residue(m.chain_id, m.seq_number, m.icode);
        if (idx < 0)
            throw std::invalid_argument(std::string("apply_mutations: no residue ") + m.chain_id +
                                        std::to_string(m.seq_number) + " in structure");
        Residue& r = out.residues[static_cast<std::size_t>(idx)];
        if (r.aa != m.wt_aa)
            throw std::invalid_argument("apply_mutations: wild-type mismatch at " + r.label() +
                                        ": structure has " + std::string(1, aa_to_one_letter(r.aa)) +
                                        ", mutation says " + std::string(1, aa_to_one_letter(m.wt_aa)));
        r.aa = m.mt_aa;
    }
    return out;
}

}  // namespace refineppi
