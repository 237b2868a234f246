//! Deterministic synthetic molecules, conformations, and datasets.
//!
//! Test fixtures and smoke runs need structurally diverse molecules with
//! geometrically consistent 3D coordinates and structure-derived property
//! targets, all reproducible from a seed. Graphs are random trees over
//! C/N/O/F with valence-respecting double bonds and occasional ring
//! closures; conformations come from a small distance-based embedding
//! (bond-length springs plus nonbonded repulsion), which is crude chemistry
//! but perfectly learnable geometry. SDF fixtures carry heavy atoms only.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::chemgraph::{parse_smiles, MoleculeGraph};
use crate::diffmath::Rng;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub molecules: usize,
    pub seed: u64,
    pub min_heavy: usize,
    pub max_heavy: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            molecules: 100,
            seed: 7,
            min_heavy: 3,
            max_heavy: 9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthMolecule {
    pub smiles: String,
    pub mol: MoleculeGraph,
    /// Heavy-atom coordinates (angstrom), in the molecule's atom order.
    pub conformation: Vec<[f64; 3]>,
}

struct ProtoAtom {
    element: &'static str,
    max_valence: usize,
    used: usize,
}

struct ProtoBond {
    a: usize,
    b: usize,
    order: usize,
}

/// Generate a deterministic corpus of molecules with embedded conformations.
pub fn generate(cfg: &SynthConfig) -> Vec<SynthMolecule> {
    let mut rng = Rng::new(cfg.seed);
    let mut out = Vec::with_capacity(cfg.molecules);
    while out.len() < cfg.molecules {
        let mut mol_rng = rng.fork(out.len() as u64);
        if let Some(m) = generate_one(&mut mol_rng, cfg) {
            out.push(m);
        }
    }
    out
}

fn generate_one(rng: &mut Rng, cfg: &SynthConfig) -> Option<SynthMolecule> {
    let n = cfg.min_heavy + rng.below(cfg.max_heavy - cfg.min_heavy + 1);
    let mut atoms: Vec<ProtoAtom> = Vec::with_capacity(n);
    let mut bonds: Vec<ProtoBond> = Vec::new();

    let pick_element = |rng: &mut Rng| -> (&'static str, usize) {
        match rng.below(100) {
            0..=59 => ("C", 4),
            60..=74 => ("N", 3),
            75..=89 => ("O", 2),
            _ => ("F", 1),
        }
    };

    for i in 0..n {
        let (element, max_valence) = pick_element(rng);
        atoms.push(ProtoAtom {
            element,
            max_valence,
            used: 0,
        });
        if i == 0 {
            continue;
        }
        // Attach to a previous atom with free valence.
        let candidates: Vec<usize> = (0..i)
            .filter(|&j| atoms[j].used < atoms[j].max_valence)
            .collect();
        if candidates.is_empty() {
            return None; // all saturated (e.g. F-F start); retry molecule
        }
        let parent = candidates[rng.below(candidates.len())];
        let double = atoms[parent].max_valence - atoms[parent].used >= 2
            && atoms[i].max_valence >= 2
            && rng.below(100) < 15;
        let order = if double { 2 } else { 1 };
        atoms[parent].used += order;
        atoms[i].used += order;
        bonds.push(ProtoBond {
            a: parent,
            b: i,
            order,
        });
    }

    // Optional single ring closure between non-adjacent atoms.
    if n >= 4 && rng.below(100) < 35 {
        let adjacent = |a: usize, b: usize| {
            bonds
                .iter()
                .any(|bd| (bd.a == a && bd.b == b) || (bd.a == b && bd.b == a))
        };
        let open: Vec<usize> = (0..n)
            .filter(|&i| atoms[i].used < atoms[i].max_valence)
            .collect();
        'search: for _ in 0..20 {
            if open.len() < 2 {
                break;
            }
            let a = open[rng.below(open.len())];
            let b = open[rng.below(open.len())];
            if a == b || adjacent(a, b) {
                continue;
            }
            // A short path would make an unrealistic tight ring.
            if path_distance(&bonds, n, a, b) < 2 {
                continue;
            }
            atoms[a].used += 1;
            atoms[b].used += 1;
            bonds.push(ProtoBond { a, b, order: 1 });
            break 'search;
        }
    }

    let smiles = write_smiles(&atoms, &bonds, n);
    let mol = parse_smiles(&smiles).ok()?;
    debug_assert_eq!(mol.atom_count(), n, "writer/parser atom count for {smiles}");
    let conformation = embed(&mol);
    Some(SynthMolecule {
        smiles,
        mol,
        conformation,
    })
}

fn path_distance(bonds: &[ProtoBond], n: usize, from: usize, to: usize) -> usize {
    let mut adj = vec![Vec::new(); n];
    for b in bonds {
        adj[b.a].push(b.b);
        adj[b.b].push(b.a);
    }
    let mut dist = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    dist[from] = 0;
    queue.push_back(from);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist[to]
}

/// Emit SMILES by DFS from atom 0. The traversal order defines atom
/// appearance order, so the parsed graph indexes atoms exactly as the
/// generator does. Non-tree bonds become ring-closure digits printed at both
/// endpoints.
fn write_smiles(atoms: &[ProtoAtom], bonds: &[ProtoBond], n: usize) -> String {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (bi, b) in bonds.iter().enumerate() {
        adj[b.a].push((b.b, bi));
        adj[b.b].push((b.a, bi));
    }

    // Pass 1: classify tree edges with the same traversal the emitter uses.
    fn mark(
        v: usize,
        parent_bond: Option<usize>,
        adj: &[Vec<(usize, usize)>],
        visited: &mut [bool],
        tree: &mut [bool],
    ) {
        visited[v] = true;
        for &(w, bi) in &adj[v] {
            if Some(bi) == parent_bond || tree[bi] {
                continue;
            }
            if !visited[w] {
                tree[bi] = true;
                mark(w, Some(bi), adj, visited, tree);
            }
        }
    }
    let mut visited = vec![false; n];
    let mut tree = vec![false; bonds.len()];
    mark(0, None, &adj, &mut visited, &mut tree);

    let mut digit = vec![0usize; bonds.len()];
    let mut next_digit = 1usize;
    for (bi, is_tree) in tree.iter().enumerate() {
        if !is_tree {
            digit[bi] = next_digit;
            next_digit += 1;
        }
    }

    // Pass 2: emit atoms, ring digits, and branches.
    #[allow(clippy::too_many_arguments)]
    fn emit(
        v: usize,
        parent_bond: Option<usize>,
        atoms: &[ProtoAtom],
        bonds: &[ProtoBond],
        adj: &[Vec<(usize, usize)>],
        tree: &[bool],
        digit: &[usize],
        out: &mut String,
    ) {
        if let Some(pb) = parent_bond {
            if bonds[pb].order == 2 {
                out.push('=');
            }
        }
        out.push_str(atoms[v].element);
        for &(_, bi) in &adj[v] {
            if digit[bi] == 0 {
                continue;
            }
            if bonds[bi].order == 2 {
                out.push('=');
            }
            if digit[bi] > 9 {
                out.push_str(&format!("%{:02}", digit[bi]));
            } else {
                out.push_str(&digit[bi].to_string());
            }
        }
        let children: Vec<(usize, usize)> = adj[v]
            .iter()
            .copied()
            .filter(|&(_, bi)| tree[bi] && Some(bi) != parent_bond)
            .collect();
        for (k, &(w, bi)) in children.iter().enumerate() {
            let last = k == children.len() - 1;
            if !last {
                out.push('(');
            }
            emit(w, Some(bi), atoms, bonds, adj, tree, digit, out);
            if !last {
                out.push(')');
            }
        }
    }
    let mut out = String::new();
    emit(0, None, atoms, bonds, &adj, &tree, &digit, &mut out);
    out
}

/// Target bond length (angstrom) by element pair and order.
fn bond_length(a: &str, b: &str, order: usize) -> f64 {
    let key = |x: &str, y: &str| -> (String, String) {
        if x <= y {
            (x.to_string(), y.to_string())
        } else {
            (y.to_string(), x.to_string())
        }
    };
    let (x, y) = key(a, b);
    match (x.as_str(), y.as_str(), order) {
        ("C", "C", 1) => 1.54,
        ("C", "C", 2) => 1.34,
        ("C", "N", 1) => 1.47,
        ("C", "N", 2) => 1.28,
        ("C", "O", 1) => 1.43,
        ("C", "O", 2) => 1.22,
        ("C", "F", _) => 1.35,
        ("N", "N", 1) => 1.45,
        ("N", "N", 2) => 1.25,
        ("N", "O", 1) => 1.40,
        ("N", "O", 2) => 1.21,
        ("F", "N", _) => 1.36,
        ("O", "O", _) => 1.48,
        ("F", "O", _) => 1.42,
        ("F", "F", _) => 1.41,
        _ => 1.45,
    }
}

/// Placement directions: vertices of an icosahedron, giving well-spread
/// deterministic growth directions.
const DIRECTIONS: [[f64; 3]; 12] = {
    // (0, +-1, +-phi) and cyclic permutations, normalized by sqrt(1 + phi^2).
    const PHI: f64 = 1.618_033_988_749_895;
    const NORM: f64 = 1.902_113_032_590_307;
    const A: f64 = 1.0 / NORM;
    const B: f64 = PHI / NORM;
    [
        [0.0, A, B],
        [0.0, A, -B],
        [0.0, -A, B],
        [0.0, -A, -B],
        [A, B, 0.0],
        [A, -B, 0.0],
        [-A, B, 0.0],
        [-A, -B, 0.0],
        [B, 0.0, A],
        [-B, 0.0, A],
        [B, 0.0, -A],
        [-B, 0.0, -A],
    ]
};

/// Distance-based embedding: deterministic BFS placement along bonds (the
/// growth direction is a hash of local topology, so a molecule's geometry is
/// a pure function of its graph), then gradient descent on bond-length
/// springs plus nonbonded repulsion.
fn embed(mol: &MoleculeGraph) -> Vec<[f64; 3]> {
    let n = mol.atom_count();
    let mut pos = vec![[0.0f64; 3]; n];
    let mut placed = vec![false; n];
    placed[0] = true;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        for (sibling, &(w, bi)) in mol.neighbors(v).iter().enumerate() {
            if placed[w] {
                continue;
            }
            let bond = &mol.bonds[bi];
            let length = bond_length(
                &mol.atoms[v].element,
                &mol.atoms[w].element,
                match bond.order {
                    crate::chemgraph::BondOrder::Double => 2,
                    _ => 1,
                },
            );
            let h = topology_hash(mol, v, w, sibling);
            let dir = DIRECTIONS[(h % 12) as usize];
            for k in 0..3 {
                pos[w][k] = pos[v][k] + dir[k] * length;
            }
            placed[w] = true;
            queue.push_back(w);
        }
    }

    // Refinement.
    let mut targets = Vec::new();
    for bond in &mol.bonds {
        let (i, j) = bond.endpoints;
        let order = match bond.order {
            crate::chemgraph::BondOrder::Double => 2,
            _ => 1,
        };
        targets.push((
            i,
            j,
            bond_length(&mol.atoms[i].element, &mol.atoms[j].element, order),
        ));
    }
    let bonded: std::collections::HashSet<(usize, usize)> = mol
        .bonds
        .iter()
        .flat_map(|b| {
            [
                (b.endpoints.0, b.endpoints.1),
                (b.endpoints.1, b.endpoints.0),
            ]
        })
        .collect();
    let step = 0.05;
    for _ in 0..400 {
        let mut grad = vec![[0.0f64; 3]; n];
        for &(i, j, length) in &targets {
            let mut d2 = 0.0;
            for k in 0..3 {
                let diff = pos[i][k] - pos[j][k];
                d2 += diff * diff;
            }
            let d = d2.sqrt().max(1e-6);
            let coeff = 2.0 * (d - length) / d;
            for k in 0..3 {
                let diff = pos[i][k] - pos[j][k];
                grad[i][k] += coeff * diff;
                grad[j][k] -= coeff * diff;
            }
        }
        // Strong nonbonded floor at 2.8 A: excluded volume dominates the
        // global shape, as it does in real conformations.
        for i in 0..n {
            for j in (i + 1)..n {
                if bonded.contains(&(i, j)) {
                    continue;
                }
                let mut d2 = 0.0;
                for k in 0..3 {
                    let diff = pos[i][k] - pos[j][k];
                    d2 += diff * diff;
                }
                let d = d2.sqrt().max(1e-6);
                if d >= 2.8 {
                    continue;
                }
                let coeff = 4.0 * (d - 2.8) / d;
                for k in 0..3 {
                    let diff = pos[i][k] - pos[j][k];
                    grad[i][k] += coeff * diff;
                    grad[j][k] -= coeff * diff;
                }
            }
        }
        for i in 0..n {
            for k in 0..3 {
                pos[i][k] -= step * grad[i][k];
            }
        }
    }
    pos
}

/// Small deterministic hash of the local environment around a growth step.
fn topology_hash(mol: &MoleculeGraph, parent: usize, child: usize, sibling: usize) -> u64 {
    let el = |i: usize| {
        mol.atoms[i]
            .element
            .bytes()
            .fold(0u64, |a, b| a * 31 + b as u64)
    };
    let mut h = el(parent)
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(el(child))
        .wrapping_mul(0xbf58_476d_1ce4_e5b9)
        .wrapping_add(mol.atoms[parent].degree as u64 * 131)
        .wrapping_add(mol.atoms[child].degree as u64 * 17)
        .wrapping_add(sibling as u64 * 7919);
    h ^= h >> 29;
    h.wrapping_mul(0x94d0_49bb_1331_11eb)
}

/// Structure-derived regression target with a small seeded noise term:
/// learnable from counts a message-passing network sees directly.
pub fn solubility_like_target(mol: &MoleculeGraph, rng: &mut Rng) -> f64 {
    let n = mol.atom_count() as f64;
    let count = |el: &str| mol.atoms.iter().filter(|a| a.element == el).count() as f64;
    let doubles = mol
        .bonds
        .iter()
        .filter(|b| matches!(b.order, crate::chemgraph::BondOrder::Double))
        .count() as f64;
    2.0 - 0.28 * n + 0.85 * count("O") + 0.55 * count("N") - 0.45 * count("F") - 0.3 * doubles
        + 0.05 * rng.normal()
}

/// Binary target: heteroatom-rich molecules are the positive class.
pub fn heteroatom_rich_label(mol: &MoleculeGraph) -> f64 {
    let hetero = mol
        .atoms
        .iter()
        .filter(|a| a.element == "O" || a.element == "N")
        .count();
    if hetero >= 2 {
        1.0
    } else {
        0.0
    }
}

/// Write `smiles,<name>` CSV rows for the corpus with the given targets.
pub fn write_csv(
    path: &Path,
    mols: &[SynthMolecule],
    target_names: &[&str],
    targets: &[Vec<f64>],
) -> std::io::Result<()> {
    let mut out = String::from("smiles");
    for name in target_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, m) in mols.iter().enumerate() {
        out.push_str(&m.smiles);
        for t in targets {
            out.push_str(&format!(",{}", t[i]));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())
}

/// Write the corpus as a concatenated V2000 SDF (heavy atoms only).
pub fn write_sdf(path: &Path, mols: &[SynthMolecule]) -> std::io::Result<()> {
    let mut out = String::new();
    for m in mols {
        out.push_str(&format!("{}\n  hamforge-synth\n\n", m.smiles));
        out.push_str(&format!(
            "{:>3}{:>3}  0  0  0  0  0  0  0  0999 V2000\n",
            m.mol.atom_count(),
            m.mol.bond_count()
        ));
        for (atom, c) in m.mol.atoms.iter().zip(&m.conformation) {
            // 12-char columns with 6 decimals: wider than strict V2000 but
            // whitespace-compatible, and pairwise distances survive the
            // round-trip at 1e-5 A.
            out.push_str(&format!(
                "{:>12.6}{:>12.6}{:>12.6} {:<3}0  0  0  0  0  0  0  0  0  0  0  0\n",
                c[0], c[1], c[2], atom.element
            ));
        }
        for bond in &m.mol.bonds {
            let order = match bond.order {
                crate::chemgraph::BondOrder::Single => 1,
                crate::chemgraph::BondOrder::Double => 2,
                crate::chemgraph::BondOrder::Triple => 3,
                crate::chemgraph::BondOrder::Aromatic => 4,
            };
            out.push_str(&format!(
                "{:>3}{:>3}{:>3}  0\n",
                bond.endpoints.0 + 1,
                bond.endpoints.1 + 1,
                order
            ));
        }
        out.push_str("M  END\n$$$$\n");
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())
}

/// Stage-1 fixture: molecules with conformations, as `data.csv` (targets are
/// the regression values, unused by engine training) plus `conf.sdf`.
pub fn write_stage1_fixture(
    dir: &Path,
    molecules: usize,
    seed: u64,
) -> std::io::Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let cfg = SynthConfig {
        molecules,
        seed,
        ..SynthConfig::default()
    };
    let mols = generate(&cfg);
    let mut rng = Rng::new(seed ^ 0x5eed);
    let targets: Vec<f64> = mols
        .iter()
        .map(|m| solubility_like_target(&m.mol, &mut rng))
        .collect();
    let csv = dir.join("data.csv");
    let sdf = dir.join("conf.sdf");
    write_csv(&csv, &mols, &["target"], &[targets])?;
    write_sdf(&sdf, &mols)?;
    Ok((csv, sdf))
}

/// Regression fixture shaped like the 1128-molecule solubility benchmark.
pub fn write_solubility_fixture(
    dir: &Path,
    molecules: usize,
    seed: u64,
) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let cfg = SynthConfig {
        molecules,
        seed,
        min_heavy: 3,
        max_heavy: 12,
    };
    let mols = generate(&cfg);
    let mut rng = Rng::new(seed ^ 0xcafe);
    let targets: Vec<f64> = mols
        .iter()
        .map(|m| solubility_like_target(&m.mol, &mut rng))
        .collect();
    let csv = dir.join("solubility.csv");
    write_csv(&csv, &mols, &["logS"], &[targets])?;
    Ok(csv)
}

/// Binary-label fixture for classification paths.
pub fn write_classification_fixture(
    dir: &Path,
    molecules: usize,
    seed: u64,
) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let cfg = SynthConfig {
        molecules,
        seed,
        ..SynthConfig::default()
    };
    let mols = generate(&cfg);
    let targets: Vec<f64> = mols.iter().map(|m| heteroatom_rich_label(&m.mol)).collect();
    let csv = dir.join("labels.csv");
    write_csv(&csv, &mols, &["hetero"], &[targets])?;
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic() {
        let cfg = SynthConfig {
            molecules: 20,
            seed: 5,
            ..SynthConfig::default()
        };
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a.len(), 20);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.smiles, y.smiles);
            assert_eq!(x.conformation, y.conformation);
        }
    }

    #[test]
    fn conformations_respect_bond_lengths() {
        let cfg = SynthConfig {
            molecules: 30,
            seed: 11,
            ..SynthConfig::default()
        };
        for m in generate(&cfg) {
            for bond in &m.mol.bonds {
                let (i, j) = bond.endpoints;
                let d: f64 = (0..3)
                    .map(|k| (m.conformation[i][k] - m.conformation[j][k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(
                    (0.9..=2.2).contains(&d),
                    "{}: bond {i}-{j} length {d}",
                    m.smiles
                );
            }
        }
    }

    #[test]
    fn smiles_roundtrip_preserves_elements() {
        let cfg = SynthConfig {
            molecules: 50,
            seed: 23,
            ..SynthConfig::default()
        };
        for m in generate(&cfg) {
            let reparsed = parse_smiles(&m.smiles).unwrap();
            assert_eq!(reparsed.atom_count(), m.mol.atom_count(), "{}", m.smiles);
            assert_eq!(reparsed.bond_count(), m.mol.bond_count(), "{}", m.smiles);
            for (a, b) in reparsed.atoms.iter().zip(&m.mol.atoms) {
                assert_eq!(a.element, b.element, "{}", m.smiles);
            }
        }
    }

    #[test]
    fn sdf_fixture_roundtrips_through_reader() {
        let dir = std::env::temp_dir().join(format!("hamforge-synth-{}", std::process::id()));
        let (csv, sdf) = write_stage1_fixture(&dir, 12, 3).unwrap();
        let ds = crate::chemgraph::read_dataset(&csv).unwrap();
        let mols = crate::chemgraph::read_sdf(&sdf).unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.skipped, 0);
        assert_eq!(mols.len(), 12);
        for (rec, sdf_mol) in ds.records.iter().zip(&mols) {
            assert_eq!(rec.mol.atom_count(), sdf_mol.atom_count());
            for (a, b) in rec.mol.atoms.iter().zip(&sdf_mol.atoms) {
                assert_eq!(a.element, b.element);
            }
            assert!(sdf_mol.reference_conformation.is_some());
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn classification_fixture_has_both_classes() {
        let dir = std::env::temp_dir().join(format!("hamforge-synth-cls-{}", std::process::id()));
        let csv = write_classification_fixture(&dir, 60, 9).unwrap();
        let ds = crate::chemgraph::read_dataset(&csv).unwrap();
        let pos = ds
            .records
            .iter()
            .filter(|r| r.targets[0] == Some(1.0))
            .count();
        assert!((10..=50).contains(&pos), "positives: {pos}/60");
        std::fs::remove_dir_all(&dir).ok();
    }
}
