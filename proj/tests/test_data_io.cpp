#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <refineppi/data_io.hpp>
#include <refineppi/synthetic.hpp>

using namespace refineppi;

namespace {

std::string atom_line(int serial, const char* name, const char* resname, char chain, int seq,
                      double x, double y, double z, char altloc = ' ', char icode = ' ') {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "ATOM  %5d  %-3s %3s %c%4d%c   %8.3f%8.3f%8.3f  1.00  0.00",
                  serial, name, resname, chain, seq, icode, x, y, z);
    buf[16] = altloc;
    return std::string(buf) + "\n";
}

std::string full_residue(int& serial, const char* resname, char chain, int seq, double x0) {
    std::string s;
    s += atom_line(serial++, "N", resname, chain, seq, x0 - 1.3, 0.3, 0.0);
    s += atom_line(serial++, "CA", resname, chain, seq, x0, 0.0, 0.0);
    s += atom_line(serial++, "C", resname, chain, seq, x0 + 1.3, 0.3, 0.0);
    s += atom_line(serial++, "O", resname, chain, seq, x0 + 1.4, 1.5, 0.0);
    return s;
}

const std::map<char, ChainGroup> kAB{{'A', ChainGroup::Ligand}, {'B', ChainGroup::Receptor}};

}  // namespace

TEST_CASE("pdb round trip preserves residues, types, and coordinates") {
    Complex c = synthetic_two_chain(3, 9);
    std::string text = serialize_pdb(c);
    std::vector<std::string> warnings;
    Complex back = parse_pdb(text, c.chain_groups, &warnings);
    REQUIRE(warnings.empty());
    REQUIRE(back.residues.size() == c.residues.size());
    for (std::size_t i = 0; i < c.residues.size(); ++i) {
        const Residue& a = c.residues[i];
        const Residue& b = back.residues[i];
        REQUIRE(a.chain_id == b.chain_id);
        REQUIRE(a.seq_number == b.seq_number);
        REQUIRE(a.aa == b.aa);
        for (int ch = 0; ch < kNumBackboneAtoms; ++ch) {
            const auto& pa = a.atoms[static_cast<std::size_t>(ch)];
            const auto& pb = b.atoms[static_cast<std::size_t>(ch)];
            REQUIRE(pa.has_value() == pb.has_value());
            if (pa) {
                // %8.3f fixed-point: half a milli-Angstrom
                REQUIRE(std::abs(pa->x - pb->x) <= 5e-4);
                REQUIRE(std::abs(pa->y - pb->y) <= 5e-4);
                REQUIRE(std::abs(pa->z - pb->z) <= 5e-4);
            }
        }
    }
    // a second round trip is exact: values are already grid-aligned
    REQUIRE(serialize_pdb(back) == serialize_pdb(parse_pdb(serialize_pdb(back), c.chain_groups)));
}

TEST_CASE("first altLoc wins for duplicated atoms") {
    int serial = 1;
    std::string text;
    text += full_residue(serial, "ALA", 'A', 1, 0.0);
    // CA of residue B1 appears twice with altLocs A then B
    text += atom_line(serial++, "N", "GLY", 'B', 1, 9.0, 0.3, 0.0);
    text += atom_line(serial++, "CA", "GLY", 'B', 1, 10.0, 0.0, 0.0, 'A');
    text += atom_line(serial++, "CA", "GLY", 'B', 1, 55.0, 0.0, 0.0, 'B');
    text += atom_line(serial++, "C", "GLY", 'B', 1, 11.0, 0.3, 0.0);
    text += atom_line(serial++, "O", "GLY", 'B', 1, 11.2, 1.5, 0.0);
    text += "END\n";
    Complex c = parse_pdb(text, kAB);
    int idx = c.find_residue('B', 1);
    REQUIRE(idx >= 0);
    REQUIRE(c.residues[static_cast<std::size_t>(idx)].ca().x == 10.0);
}

TEST_CASE("ungrouped chains and non-canonical residues are skipped with one warning each") {
    int serial = 1;
    std::string text;
    text += full_residue(serial, "ALA", 'A', 1, 0.0);
    text += full_residue(serial, "GLY", 'B', 1, 9.0);
    text += full_residue(serial, "LEU", 'C', 1, 30.0);  // no group
    text += full_residue(serial, "MSE", 'A', 2, 4.0);   // non-canonical
    std::vector<std::string> warnings;
    Complex c = parse_pdb(text, kAB, &warnings);
    REQUIRE(c.residues.size() == 2);
    REQUIRE(warnings.size() == 2);
    REQUIRE(warnings[0].find("chain C") != std::string::npos);
    REQUIRE(warnings[1].find("MSE") != std::string::npos);
}

TEST_CASE("residues missing a core backbone atom are dropped with a warning") {
    int serial = 1;
    std::string text;
    text += full_residue(serial, "ALA", 'A', 1, 0.0);
    text += full_residue(serial, "GLY", 'B', 1, 9.0);
    // A2 lacks its C atom
    text += atom_line(serial++, "N", "SER", 'A', 2, 3.0, 0.3, 0.0);
    text += atom_line(serial++, "CA", "SER", 'A', 2, 4.0, 0.0, 0.0);
    text += atom_line(serial++, "O", "SER", 'A', 2, 5.0, 1.5, 0.0);
    std::vector<std::string> warnings;
    Complex c = parse_pdb(text, kAB, &warnings);
    REQUIRE(c.residues.size() == 2);
    REQUIRE(warnings.size() == 1);
    REQUIRE(warnings[0].find("dropped") != std::string::npos);
    // CB is optional: no warning for its absence anywhere
}

TEST_CASE("pdb with no usable residues is an error") {
    std::string text = "REMARK nothing here\nEND\n";
    REQUIRE_THROWS_AS(parse_pdb(text, kAB), DataError);
    int serial = 1;
    std::string only_ungrouped = full_residue(serial, "ALA", 'Z', 1, 0.0);
    REQUIRE_THROWS_AS(parse_pdb(only_ungrouped, kAB), DataError);
}

TEST_CASE("insertion codes distinguish residues") {
    int serial = 1;
    std::string text;
    text += full_residue(serial, "ALA", 'A', 1, 0.0);
    text += full_residue(serial, "GLY", 'B', 1, 9.0);
    std::string with_icode;
    with_icode += atom_line(serial++, "N", "LYS", 'A', 1, 2.7, 0.3, 0.0, ' ', 'A');
    with_icode += atom_line(serial++, "CA", "LYS", 'A', 1, 4.0, 0.0, 0.0, ' ', 'A');
    with_icode += atom_line(serial++, "C", "LYS", 'A', 1, 5.3, 0.3, 0.0, ' ', 'A');
    with_icode += atom_line(serial++, "O", "LYS", 'A', 1, 5.4, 1.5, 0.0, ' ', 'A');
    Complex c = parse_pdb(text + with_icode, kAB);
    REQUIRE(c.residues.size() == 3);
    REQUIRE(c.find_residue('A', 1, 'A') >= 0);
    REQUIRE(c.find_residue('A', 1, ' ') >= 0);
    auto order = c.chain_order('A');
    REQUIRE(order.size() == 2);
    // plain 1 sorts before 1A
    REQUIRE(c.residues[static_cast<std::size_t>(order[0])].icode == ' ');
    REQUIRE(c.residues[static_cast<std::size_t>(order[1])].icode == 'A');
}

TEST_CASE("mutation token parsing") {
    Mutation m = parse_mutation("TI38A");
    REQUIRE(m.wt_aa == AminoAcid::Thr);
    REQUIRE(m.chain_id == 'I');
    REQUIRE(m.seq_number == 38);
    REQUIRE(m.icode == ' ');
    REQUIRE(m.mt_aa == AminoAcid::Ala);

    Mutation mi = parse_mutation("RC100bK");
    REQUIRE(mi.wt_aa == AminoAcid::Arg);
    REQUIRE(mi.chain_id == 'C');
    REQUIRE(mi.seq_number == 100);
    REQUIRE(mi.icode == 'b');
    REQUIRE(mi.mt_aa == AminoAcid::Lys);

    REQUIRE_THROWS_AS(parse_mutation("TA1"), DataError);     // too short
    REQUIRE_THROWS_AS(parse_mutation("XA38K"), DataError);   // unknown wild type
    REQUIRE_THROWS_AS(parse_mutation("TAxyK"), DataError);   // missing number
    REQUIRE_THROWS_AS(parse_mutation("TA38T"), DataError);   // wild type == mutant
    REQUIRE_THROWS_AS(parse_mutation("TA38abK"), DataError); // malformed tail
    REQUIRE_THROWS_AS(parse_mutation("TA38&"), DataError);   // unknown mutant

    auto list = parse_mutations(" TI38A , RC100bK ");
    REQUIRE(list.size() == 2);
    REQUIRE(list[1].seq_number == 100);
    REQUIRE_THROWS_AS(parse_mutations("  ,  "), DataError);
}

TEST_CASE("dataset tsv parsing and validation") {
    std::string text = kDatasetHeader +
                       "\n"
                       "1ACB\tE\tI\tTI38A\t1.25\n"
                       "1BRS\tAB\tDE\tKA27E,RD59A\t-0.40\n";
    auto entries = parse_dataset_tsv(text);
    REQUIRE(entries.size() == 2);
    REQUIRE(entries[0].pdb == "1ACB");
    REQUIRE(entries[0].ligand_chains == "E");
    REQUIRE(entries[0].mutations.size() == 1);
    REQUIRE(entries[0].ddg == 1.25);
    REQUIRE(entries[1].mutations.size() == 2);
    REQUIRE(entries[1].ddg == -0.40);

    auto groups = chain_groups_of(entries[1]);
    REQUIRE(groups.at('A') == ChainGroup::Ligand);
    REQUIRE(groups.at('B') == ChainGroup::Ligand);
    REQUIRE(groups.at('D') == ChainGroup::Receptor);
    REQUIRE(groups.at('E') == ChainGroup::Receptor);

    SECTION("wrong header") {
        REQUIRE_THROWS_WITH(parse_dataset_tsv("pdb\tstuff\n1ACB\tE\tI\tTI38A\t1.0\n"),
                            Catch::Matchers::ContainsSubstring("header"));
    }
    SECTION("wrong field count") {
        REQUIRE_THROWS_AS(parse_dataset_tsv(kDatasetHeader + "\n1ACB\tE\tI\t1.0\n"), DataError);
    }
    SECTION("bad ddg number") {
        REQUIRE_THROWS_AS(parse_dataset_tsv(kDatasetHeader + "\n1ACB\tE\tI\tTI38A\tzzz\n"),
                          DataError);
    }
    SECTION("chain on both sides") {
        REQUIRE_THROWS_WITH(parse_dataset_tsv(kDatasetHeader + "\n1ACB\tEI\tI\tTI38A\t1.0\n"),
                            Catch::Matchers::ContainsSubstring("both"));
    }
}

TEST_CASE("fold splitting is structure-level and deterministic") {
    std::vector<DatasetEntry> entries;
    for (int i = 0; i < 12; ++i) {
        DatasetEntry e;
        e.pdb = "S" + std::to_string(i % 6);  // 6 distinct structures, 2 records each
        entries.push_back(e);
    }
    auto folds = split_folds(entries, 3, 11);
    REQUIRE(folds.size() == 6);
    for (const auto& [id, f] : folds) {
        REQUIRE(f >= 0);
        REQUIRE(f < 3);
    }
    // balanced round robin: each fold gets two structures
    std::map<int, int> counts;
    for (const auto& [id, f] : folds) counts[f]++;
    REQUIRE(counts[0] == 2);
    REQUIRE(counts[1] == 2);
    REQUIRE(counts[2] == 2);

    auto again = split_folds(entries, 3, 11);
    REQUIRE(folds == again);
    auto other_seed = split_folds(entries, 3, 12);
    REQUIRE(folds != other_seed);

    REQUIRE_THROWS_AS(split_folds(entries, 1, 0), std::invalid_argument);
}

TEST_CASE("rmsf tsv round trip and validation") {
    std::map<std::pair<char, int>, double> rmsf{{{'A', 1}, 0.5}, {{'A', 2}, 1.25}, {{'B', 1}, 2.0}};
    std::string text = serialize_rmsf_tsv(rmsf);
    auto back = parse_rmsf_tsv(text);
    REQUIRE(back == rmsf);

    REQUIRE_THROWS_WITH(parse_rmsf_tsv(kRmsfHeader + "\nA\t1\t-0.5\n"),
                        Catch::Matchers::ContainsSubstring("negative"));
    REQUIRE_THROWS_WITH(parse_rmsf_tsv(kRmsfHeader + "\nA\t1\t0.5\nA\t1\t0.7\n"),
                        Catch::Matchers::ContainsSubstring("duplicate"));
    REQUIRE_THROWS_AS(parse_rmsf_tsv("bogus\nA\t1\t0.5\n"), DataError);
}

TEST_CASE("rmsf lookup follows residue storage order and reports gaps") {
    Complex c = synthetic_two_chain(8, 6);
    std::map<std::pair<char, int>, double> rmsf;
    for (const auto& r : c.residues)
        rmsf[{r.chain_id, r.seq_number}] = 0.1 * static_cast<double>(r.seq_number);
    auto values = rmsf_for_complex(c, rmsf);
    REQUIRE(values.size() == c.residues.size());
    for (std::size_t i = 0; i < c.residues.size(); ++i)
        REQUIRE(values[i] == 0.1 * static_cast<double>(c.residues[i].seq_number));

    rmsf.erase({c.residues[0].chain_id, c.residues[0].seq_number});
    REQUIRE_THROWS_AS(rmsf_for_complex(c, rmsf), DataError);
}
