#pragma once
/*
data_io.hpp
-----------
File formats: the fixed-column PDB backbone subset, SKEMPI-style
mutation strings ("TI38A", comma separated), the tab-separated dataset
table, structure-level fold splits, and per-residue RMSF tables.
All failures raise DataError with enough context to locate the line.
*/

#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "structure.hpp"

namespace refineppi {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace io_detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& raw, const std::string& what, int line_no) {
    std::string t = trim(raw);
    if (t.empty()) throw DataError("line " + std::to_string(line_no) + ": empty " + what);
    try {
        std::size_t pos = 0;
        double v = std::stod(t, &pos);
        if (pos != t.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw DataError("line " + std::to_string(line_no) + ": unparsable " + what + " '" + t + "'");
    }
}

inline int parse_int(const std::string& raw, const std::string& what, int line_no) {
    std::string t = trim(raw);
    try {
        std::size_t pos = 0;
        int v = std::stoi(t, &pos);
        if (pos != t.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw DataError("line " + std::to_string(line_no) + ": unparsable " + what + " '" + t + "'");
    }
}

inline std::string field(const std::string& line, std::size_t col1, std::size_t col2) {
    // 1-based inclusive column range, tolerant of short lines.
    if (line.size() < col1) return "";
    return line.substr(col1 - 1, std::min(col2, line.size()) - col1 + 1);
}

}  // namespace io_detail

// Parses ATOM records of a PDB document. Fixed columns: atom name 13-16,
// resName 18-20, chain 22, resSeq 23-26, iCode 27, x/y/z 31-54. The first
// altLoc listed for an atom wins; non-canonical residues are skipped with
// a warning; residues missing any of N/CA/C/O are dropped with a warning.
// Chains absent from `groups` are skipped with a warning.
inline Complex parse_pdb(const std::string& text, const std::map<char, ChainGroup>& groups,
                         std::vector<std::string>* warnings = nullptr) {
    auto warn = [&](const std::string& msg) {
        if (warnings) warnings->push_back(msg);
    };
    Complex out;
    out.chain_groups = groups;

    std::map<std::tuple<char, int, char>, std::size_t> index;  // residue key -> position
    std::vector<std::tuple<char, int, char>> skipped_noncanonical;
    std::vector<char> skipped_chains;

    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.rfind("ATOM", 0) != 0) continue;
        std::string name = io_detail::trim(io_detail::field(line, 13, 16));
        char altloc = line.size() >= 17 ? line[16] : ' ';
        std::string resname = io_detail::trim(io_detail::field(line, 18, 20));
        char chain = line.size() >= 22 ? line[21] : ' ';
        int seq = io_detail::parse_int(io_detail::field(line, 23, 26), "residue number", line_no);
        char icode = line.size() >= 27 ? line[26] : ' ';
        if (icode == '\r') icode = ' ';

        if (!groups.count(chain)) {
            if (std::find(skipped_chains.begin(), skipped_chains.end(), chain) ==
                skipped_chains.end()) {
                skipped_chains.push_back(chain);
                warn(std::string("chain ") + chain + " has no group assignment; skipped");
            }
            continue;
        }
        auto aa = aa_from_three_letter(resname);
        std::tuple<char, int, char> key{chain, seq, icode};
        if (!aa) {
            if (std::find(skipped_noncanonical.begin(), skipped_noncanonical.end(), key) ==
                skipped_noncanonical.end()) {
                skipped_noncanonical.push_back(key);
                warn("non-canonical residue " + resname + " at " + chain + std::to_string(seq) +
                     "; skipped");
            }
            continue;
        }

        int atom_idx = -1;
        for (int a = 0; a < kNumBackboneAtoms; ++a)
            if (name == kBackboneAtomNames[a]) atom_idx = a;
        if (atom_idx < 0) continue;  // side chain atom beyond CB

        double x = io_detail::parse_double(io_detail::field(line, 31, 38), "x coordinate", line_no);
        double y = io_detail::parse_double(io_detail::field(line, 39, 46), "y coordinate", line_no);
        double z = io_detail::parse_double(io_detail::field(line, 47, 54), "z coordinate", line_no);

        auto it = index.find(key);
        if (it == index.end()) {
            Residue r;
            r.chain_id = chain;
            r.seq_number = seq;
            r.icode = icode;
            r.aa = *aa;
            out.residues.push_back(r);
            it = index.emplace(key, out.residues.size() - 1).first;
        }
        Residue& r = out.residues[it->second];
        auto& slot = r.atoms[static_cast<std::size_t>(atom_idx)];
        if (slot) {
            if (altloc != ' ')
                continue;  // later altLoc for an atom we already have: first wins
            continue;
        }
        slot = Vec3{x, y, z};
    }

    // Drop residues missing core backbone atoms.
    std::vector<Residue> kept;
    kept.reserve(out.residues.size());
    for (const auto& r : out.residues) {
        if (!r.has_core_backbone()) {
            warn("residue " + r.label() + " is missing a core backbone atom; dropped");
            continue;
        }
        kept.push_back(r);
    }
    out.residues = std::move(kept);
    if (out.residues.empty()) throw DataError("parse_pdb: no usable residues found");
    out.validate();
    return out;
}

inline std::string serialize_pdb(const Complex& c) {
    std::ostringstream os;
    int serial = 1;
    char buf[96];
    for (const auto& r : c.residues) {
        for (int a = 0; a < kNumBackboneAtoms; ++a) {
            const auto& pos = r.atoms[static_cast<std::size_t>(a)];
            if (!pos) continue;
            std::snprintf(buf, sizeof(buf),
                          "ATOM  %5d  %-3s %3s %c%4d%c   %8.3f%8.3f%8.3f  1.00  0.00",
                          serial++, kBackboneAtomNames[a], aa_to_three_letter(r.aa).c_str(),
                          r.chain_id, r.seq_number, r.icode, pos->x, pos->y, pos->z);
            os << buf << "\n";
        }
    }
    os << "END\n";
    return os.str();
}

// "TI38A": wild type T, chain I, position 38, mutant A. An insertion code
// may sit between the digits and the mutant letter ("TI38aA"). Several
// mutations are comma separated.
inline Mutation parse_mutation(const std::string& token) {
    std::string t = io_detail::trim(token);
    if (t.size() < 4) throw DataError("mutation '" + t + "': too short");
    auto wt = aa_from_one_letter(t[0]);
    if (!wt) throw DataError("mutation '" + t + "': unknown wild-type code '" + t.substr(0, 1) + "'");
    char chain = t[1];
    std::size_t p = 2;
    std::size_t digits_start = p;
    while (p < t.size() && std::isdigit(static_cast<unsigned char>(t[p]))) ++p;
    if (p == digits_start) throw DataError("mutation '" + t + "': missing residue number");
    int seq = std::stoi(t.substr(digits_start, p - digits_start));
    std::string tail = t.substr(p);
    char icode = ' ';
    char mt_char;
    if (tail.size() == 1) {
        mt_char = tail[0];
    } else if (tail.size() == 2) {
        icode = tail[0];
        mt_char = tail[1];
    } else {
        throw DataError("mutation '" + t + "': malformed tail '" + tail + "'");
    }
    auto mt = aa_from_one_letter(mt_char);
    if (!mt) throw DataError("mutation '" + t + "': unknown mutant code '" + std::string(1, mt_char) + "'");
    if (*wt == *mt) throw DataError("mutation '" + t + "': wild type equals mutant");
    return Mutation{*wt, chain, seq, icode, *mt};
}

inline std::vector<Mutation> parse_mutations(const std::string& list) {
    std::vector<Mutation> out;
    for (const std::string& tok : io_detail::split(list, ','))
        if (!io_detail::trim(tok).empty()) out.push_back(parse_mutation(tok));
    if (out.empty()) throw DataError("mutation list '" + list + "' is empty");
    return out;
}

struct DatasetEntry {
    std::string pdb;               // structure id or file name
    std::string ligand_chains;     // chain letters, e.g. "AB"
    std::string receptor_chains;
    std::string mutation_text;
    std::vector<Mutation> mutations;
    double ddg = 0.0;              // kcal/mol
};

inline const std::string kDatasetHeader = "pdb\tligand_chains\treceptor_chains\tmutations\tddg";

inline std::vector<DatasetEntry> parse_dataset_tsv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    std::vector<DatasetEntry> out;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (io_detail::trim(line).empty()) continue;
        if (!saw_header) {
            if (line != kDatasetHeader)
                throw DataError("line 1: expected dataset header '" + kDatasetHeader + "'");
            saw_header = true;
            continue;
        }
        auto fields = io_detail::split(line, '\t');
        if (fields.size() != 5)
            throw DataError("line " + std::to_string(line_no) + ": expected 5 tab-separated fields, got " +
                            std::to_string(fields.size()));
        DatasetEntry e;
        e.pdb = io_detail::trim(fields[0]);
        e.ligand_chains = io_detail::trim(fields[1]);
        e.receptor_chains = io_detail::trim(fields[2]);
        e.mutation_text = io_detail::trim(fields[3]);
        e.mutations = parse_mutations(e.mutation_text);
        e.ddg = io_detail::parse_double(fields[4], "ddg", line_no);
        if (e.pdb.empty() || e.ligand_chains.empty() || e.receptor_chains.empty())
            throw DataError("line " + std::to_string(line_no) + ": empty structure or chain field");
        for (char lc : e.ligand_chains)
            if (e.receptor_chains.find(lc) != std::string::npos)
                throw DataError("line " + std::to_string(line_no) + ": chain " + std::string(1, lc) +
                                " listed on both sides");
        out.push_back(std::move(e));
    }
    if (!saw_header) throw DataError("dataset is empty");
    return out;
}

inline std::map<char, ChainGroup> chain_groups_of(const DatasetEntry& e) {
    std::map<char, ChainGroup> g;
    for (char c : e.ligand_chains) g[c] = ChainGroup::Ligand;
    for (char c : e.receptor_chains) g[c] = ChainGroup::Receptor;
    return g;
}

// Structure-level splits: distinct structure ids are shuffled by seed and
// dealt round-robin, so every record of one structure lands in one fold.
inline std::map<std::string, int> split_folds(const std::vector<DatasetEntry>& entries,
                                              int n_folds, std::uint64_t seed) {
    if (n_folds < 2) throw std::invalid_argument("split_folds: need at least 2 folds");
    std::vector<std::string> ids;
    for (const auto& e : entries)
        if (std::find(ids.begin(), ids.end(), e.pdb) == ids.end()) ids.push_back(e.pdb);
    Rng rng(seed);
    for (std::size_t i = ids.size(); i > 1; --i)
        std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
    std::map<std::string, int> fold;
    for (std::size_t i = 0; i < ids.size(); ++i) fold[ids[i]] = static_cast<int>(i % static_cast<std::size_t>(n_folds));
    return fold;
}

inline const std::string kRmsfHeader = "chain\tresseq\trmsf";

// Per-residue root-mean-square fluctuation table keyed by (chain, resseq).
inline std::map<std::pair<char, int>, double> parse_rmsf_tsv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    bool saw_header = false;
    std::map<std::pair<char, int>, double> out;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (io_detail::trim(line).empty()) continue;
        if (!saw_header) {
            if (line != kRmsfHeader)
                throw DataError("line 1: expected rmsf header '" + kRmsfHeader + "'");
            saw_header = true;
            continue;
        }
        auto fields = io_detail::split(line, '\t');
        if (fields.size() != 3)
            throw DataError("line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
        std::string chain_field = io_detail::trim(fields[0]);
        if (chain_field.size() != 1)
            throw DataError("line " + std::to_string(line_no) + ": chain must be one character");
        char chain = chain_field[0];
        int seq = io_detail::parse_int(fields[1], "residue number", line_no);
        double rmsf = io_detail::parse_double(fields[2], "rmsf", line_no);
        if (rmsf < 0.0)
            throw DataError("line " + std::to_string(line_no) + ": negative rmsf");
        if (!out.emplace(std::make_pair(chain, seq), rmsf).second)
            throw DataError("line " + std::to_string(line_no) + ": duplicate residue " +
                            std::string(1, chain) + std::to_string(seq));
    }
    if (!saw_header) throw DataError("rmsf table is empty");
    return out;
}

inline std::string serialize_rmsf_tsv(const std::map<std::pair<char, int>, double>& rmsf) {
    std::ostringstream os;
    os << kRmsfHeader << "\n";
    for (const auto& [key, v] : rmsf) os << key.first << "\t" << key.second << "\t" << v << "\n";
    return os.str();
}

// Aligns an RMSF table with a complex; every residue must be present.
inline std::vector<double> rmsf_for_complex(const Complex& c,
                                            const std::map<std::pair<char, int>, double>& rmsf) {
    std::vector<double> out;
    out.reserve(c.residues.size());
    for (const auto& r : c.residues) {
        auto it = rmsf.find({r.chain_id, r.seq_number});
        if (it == rmsf.end())
            throw DataError("rmsf table has no entry for residue " + r.label());
        out.push_back(it->second);
    }
    return out;
}

}  // namespace refineppi
