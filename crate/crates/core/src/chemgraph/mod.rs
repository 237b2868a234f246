//! Molecular graphs: SMILES parsing, featurization, and file formats.
//!
//! Hydrogens are implicit counts on heavy atoms, never graph nodes; SDF
//! hydrogens are folded into the counts on read and the heavy-atom
//! conformation kept. Aromaticity comes from input annotations (lowercase
//! SMILES atoms, order-4 SDF bonds); there is no ring-perception aromatizer.

mod dataset;
mod elements;
mod featurize;
mod sdf;
mod smiles;
mod xyz;

pub use dataset::{read_dataset, DataRecord, Dataset};
pub use elements::{atomic_mass, is_known_element, standard_valence};
pub use featurize::{featurize, ATOM_FEATURES, BOND_FEATURES};
pub use sdf::read_sdf;
pub use smiles::{parse_smiles, SmilesError};
pub use xyz::{read_xyz, read_xyz_frames, write_xyz, write_xyz_frames, XyzFrame};

use thiserror::Error;

/// Errors from dataset / geometry file ingestion.
#[derive(Debug, Error)]
pub enum FileError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("line {line}: atom count mismatch: {detail}")]
    CountMismatch { line: usize, detail: String },
    #[error("line {line}: malformed: {detail}")]
    MalformedLine { line: usize, detail: String },
    #[error("unsupported connection-table version {0} (only V2000 is handled)")]
    UnsupportedVersion(String),
    #[error("truncated record starting at line {0}")]
    TruncatedRecord(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hybridization {
    Sp,
    Sp2,
    Sp3,
    Sp3d,
    Sp3d2,
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Chirality {
    None,
    /// `@@` in SMILES.
    Cw,
    /// `@` in SMILES.
    Ccw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the valence sum (aromatic counts 1.5).
    pub fn valence(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BondStereo {
    None,
    /// Directional marker present but not perceived.
    Any,
    Z,
    E,
}

#[derive(Clone, Debug)]
pub struct Atom {
    pub element: String,
    /// Standard atomic weight (unitless).
    pub relative_mass: f64,
    /// Number of explicit bonds in the heavy-atom graph.
    pub degree: usize,
    pub formal_charge: i32,
    pub is_aromatic: bool,
    /// Implicit hydrogen count, clamped to 0..=4.
    pub num_hydrogens: u8,
    pub hybridization: Hybridization,
    pub chirality: Chirality,
}

#[derive(Clone, Debug)]
pub struct Bond {
    /// Ordered pair of atom indices; stored once, queried both directions.
    pub endpoints: (usize, usize),
    pub order: BondOrder,
    pub is_conjugated: bool,
    pub in_ring: bool,
    pub stereo: BondStereo,
}

/// Attributed molecular graph with featurization and optional reference
/// 3D conformation (angstrom).
#[derive(Clone, Debug)]
pub struct MoleculeGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Atom indices in order of first appearance in the SMILES string
    /// (identity for parsers that emit atoms in appearance order).
    pub smiles_order: Vec<usize>,
    /// n x ATOM_FEATURES, row per atom.
    pub atom_features: Vec<Vec<f64>>,
    /// BOND_FEATURES per bond, aligned with `bonds`.
    pub bond_features: Vec<Vec<f64>>,
    pub reference_conformation: Option<Vec<[f64; 3]>>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MoleculeGraph {
    /// Build a graph from bare atoms/bonds; derives degrees, ring membership,
    /// hybridization, conjugation and the feature matrices.
    pub fn assemble(
        mut atoms: Vec<Atom>,
        mut bonds: Vec<Bond>,
        smiles_order: Vec<usize>,
        reference_conformation: Option<Vec<[f64; 3]>>,
    ) -> Self {
        let n = atoms.len();
        for bond in &bonds {
            let (a, b) = bond.endpoints;
            assert!(a != b, "self-bond");
            assert!(a < n && b < n, "bond endpoint out of range");
        }

        let mut adjacency = vec![Vec::new(); n];
        for (bi, bond) in bonds.iter().enumerate() {
            let (a, b) = bond.endpoints;
            adjacency[a].push((b, bi));
            adjacency[b].push((a, bi));
        }
        for (i, atom) in atoms.iter_mut().enumerate() {
            atom.degree = adjacency[i].len();
        }

        mark_ring_bonds(&adjacency, &mut bonds, n);
        assign_hybridization(&mut atoms, &bonds, &adjacency);
        assign_conjugation(&mut bonds, &adjacency);

        let mut graph = MoleculeGraph {
            atoms,
            bonds,
            smiles_order,
            atom_features: Vec::new(),
            bond_features: Vec::new(),
            reference_conformation,
            adjacency,
        };
        let (af, bf) = featurize::compute(&graph);
        graph.atom_features = af;
        graph.bond_features = bf;
        graph
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    /// Neighbors of atom `i` as `(other_atom, bond_index)` pairs.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    /// The single stored bond record between `i` and `j`, if bonded,
    /// regardless of query direction.
    pub fn bond_between(&self, i: usize, j: usize) -> Option<&Bond> {
        self.adjacency[i]
            .iter()
            .find(|&&(other, _)| other == j)
            .map(|&(_, bi)| &self.bonds[bi])
    }

    /// Atom masses in graph order.
    pub fn masses(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.relative_mass).collect()
    }

    /// Positions of each atom in `smiles_order`: `inverse[i]` is the sequence
    /// step at which atom `i` is consumed.
    pub fn smiles_order_inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.smiles_order.len()];
        for (step, &atom) in self.smiles_order.iter().enumerate() {
            inv[atom] = step;
        }
        inv
    }
}

/// A bond is in a ring iff it is not a bridge (Tarjan lowlink over an
/// iterative DFS).
fn mark_ring_bonds(adjacency: &[Vec<(usize, usize)>], bonds: &mut [Bond], n: usize) {
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0usize;
    let mut is_bridge = vec![false; bonds.len()];

    enum Step {
        Descend(usize, usize),
        Retreat(usize, usize),
        Stay,
    }

    for start in 0..n {
        if disc[start] != usize::MAX {
            continue;
        }
        // (node, parent_bond, neighbor cursor)
        let mut stack: Vec<(usize, usize, usize)> = vec![(start, usize::MAX, 0)];
        disc[start] = timer;
        low[start] = timer;
        timer += 1;
        loop {
            let step = match stack.last_mut() {
                None => break,
                Some(frame) => {
                    let (v, pbond) = (frame.0, frame.1);
                    if frame.2 < adjacency[v].len() {
                        let (to, bi) = adjacency[v][frame.2];
                        frame.2 += 1;
                        if bi == pbond {
                            Step::Stay
                        } else if disc[to] == usize::MAX {
                            Step::Descend(to, bi)
                        } else {
                            low[v] = low[v].min(disc[to]);
                            Step::Stay
                        }
                    } else {
                        Step::Retreat(v, pbond)
                    }
                }
            };
            match step {
                Step::Descend(to, bi) => {
                    disc[to] = timer;
                    low[to] = timer;
                    timer += 1;
                    stack.push((to, bi, 0));
                }
                Step::Retreat(v, pbond) => {
                    stack.pop();
                    if let Some(frame) = stack.last() {
                        let parent = frame.0;
                        low[parent] = low[parent].min(low[v]);
                        if low[v] > disc[parent] {
                            is_bridge[pbond] = true;
                        }
                    }
                }
                Step::Stay => {}
            }
        }
    }
    for (bi, bond) in bonds.iter_mut().enumerate() {
        bond.in_ring = !is_bridge[bi];
    }
}

fn assign_hybridization(atoms: &mut [Atom], bonds: &[Bond], adjacency: &[Vec<(usize, usize)>]) {
    for (i, atom) in atoms.iter_mut().enumerate() {
        let mut doubles = 0;
        let mut triples = 0;
        let mut aromatic = atom.is_aromatic;
        for &(_, bi) in &adjacency[i] {
            match bonds[bi].order {
                BondOrder::Double => doubles += 1,
                BondOrder::Triple => triples += 1,
                BondOrder::Aromatic => aromatic = true,
                BondOrder::Single => {}
            }
        }
        atom.hybridization = if triples > 0 || doubles >= 2 {
            Hybridization::Sp
        } else if doubles == 1 || aromatic {
            Hybridization::Sp2
        } else {
            match atom.degree + atom.num_hydrogens as usize {
                0..=4 => Hybridization::Sp3,
                5 => Hybridization::Sp3d,
                6 => Hybridization::Sp3d2,
                _ => Hybridization::Other,
            }
        };
    }
}

/// A bond is conjugated iff it is aromatic or both endpoints carry some
/// multiple/aromatic bond (a documented simplification of the usual
/// perception).
fn assign_conjugation(bonds: &mut [Bond], adjacency: &[Vec<(usize, usize)>]) {
    let unsaturated: Vec<bool> = adjacency
        .iter()
        .map(|nbrs| {
            nbrs.iter()
                .any(|&(_, bi)| !matches!(bonds[bi].order, BondOrder::Single))
        })
        .collect();
    for bond in bonds.iter_mut() {
        let (a, b) = bond.endpoints;
        bond.is_conjugated =
            matches!(bond.order, BondOrder::Aromatic) || (unsaturated[a] && unsaturated[b]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_symmetric_queries() {
        let mol = parse_smiles("CCO").unwrap();
        let ab = mol.bond_between(0, 1).unwrap();
        let ba = mol.bond_between(1, 0).unwrap();
        assert_eq!(ab.endpoints, ba.endpoints);
        assert!(mol.bond_between(0, 2).is_none());
    }

    #[test]
    fn ring_bonds_all_marked_in_cycle() {
        let mol = parse_smiles("C1CCC1C").unwrap();
        let ring: usize = mol.bonds.iter().filter(|b| b.in_ring).count();
        let chain: usize = mol.bonds.iter().filter(|b| !b.in_ring).count();
        assert_eq!(ring, 4);
        assert_eq!(chain, 1);
    }
}
