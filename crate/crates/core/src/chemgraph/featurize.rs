use super::{BondOrder, BondStereo, Chirality, Hybridization, MoleculeGraph};

/// Atom feature width: element one-hot over 15 named elements + other (16),
/// degree one-hot 0..=5 (6), formal-charge scalar (1), radical-electron
/// scalar (1, always 0 here), hybridization one-hot (6), aromatic flag (1),
/// hydrogen-count one-hot 0..=4 (5), chiral flag (1), chirality-type one-hot
/// CW/CCW (2).
pub const ATOM_FEATURES: usize = 39;

/// Bond feature width: order one-hot (4), conjugated (1), in-ring (1),
/// stereo one-hot (4).
pub const BOND_FEATURES: usize = 10;

/// Element slots in the one-hot block; anything else maps to "other".
const ELEMENT_SLOTS: [&str; 15] = [
    "B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "As", "Se", "Br", "Te", "I", "At",
];

/// Compute the feature matrices for a molecule (atom rows x 39, one
/// 10-vector per bond). Unknown elements land in the "other" slot, so this
/// never fails.
pub fn featurize(mol: &MoleculeGraph) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    compute(mol)
}

pub(super) fn compute(mol: &MoleculeGraph) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let atom_features = mol
        .atoms
        .iter()
        .map(|atom| {
            let mut f = vec![0.0; ATOM_FEATURES];
            let slot = ELEMENT_SLOTS
                .iter()
                .position(|s| *s == atom.element)
                .unwrap_or(15);
            f[slot] = 1.0;
            f[16 + atom.degree.min(5)] = 1.0;
            f[22] = atom.formal_charge as f64;
            f[23] = 0.0; // radical electrons: not modeled
            let hyb = match atom.hybridization {
                Hybridization::Sp => 0,
                Hybridization::Sp2 => 1,
                Hybridization::Sp3 => 2,
                Hybridization::Sp3d => 3,
                Hybridization::Sp3d2 => 4,
                Hybridization::Other => 5,
            };
            f[24 + hyb] = 1.0;
            f[30] = if atom.is_aromatic { 1.0 } else { 0.0 };
            f[31 + (atom.num_hydrogens as usize).min(4)] = 1.0;
            match atom.chirality {
                Chirality::None => {}
                Chirality::Cw => {
                    f[36] = 1.0;
                    f[37] = 1.0;
                }
                Chirality::Ccw => {
                    f[36] = 1.0;
                    f[38] = 1.0;
                }
            }
            f
        })
        .collect();

    let bond_features = mol
        .bonds
        .iter()
        .map(|bond| {
            let mut f = vec![0.0; BOND_FEATURES];
            let order = match bond.order {
                BondOrder::Single => 0,
                BondOrder::Double => 1,
                BondOrder::Triple => 2,
                BondOrder::Aromatic => 3,
            };
            f[order] = 1.0;
            f[4] = if bond.is_conjugated { 1.0 } else { 0.0 };
            f[5] = if bond.in_ring { 1.0 } else { 0.0 };
            let stereo = match bond.stereo {
                BondStereo::None => 0,
                BondStereo::Any => 1,
                BondStereo::Z => 2,
                BondStereo::E => 3,
            };
            f[6 + stereo] = 1.0;
            f
        })
        .collect();

    (atom_features, bond_features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemgraph::parse_smiles;

    #[test]
    fn methane_carbon_vector() {
        let mol = parse_smiles("C").unwrap();
        let f = &mol.atom_features[0];
        assert_eq!(f.len(), ATOM_FEATURES);
        assert_eq!(f[1], 1.0); // element C
        assert_eq!(f[16], 1.0); // degree 0
        assert_eq!(f[35], 1.0); // 4 hydrogens
        assert_eq!(f[30], 0.0); // not aromatic
        assert_eq!(f[36], 0.0); // not chiral
    }

    #[test]
    fn benzene_bond_vector() {
        let mol = parse_smiles("c1ccccc1").unwrap();
        let f = &mol.bond_features[0];
        assert_eq!(f.len(), BOND_FEATURES);
        assert_eq!(f[3], 1.0); // aromatic order
        assert_eq!(f[4], 1.0); // conjugated
        assert_eq!(f[5], 1.0); // in ring
        assert_eq!(f[6], 1.0); // stereo none
    }

    #[test]
    fn one_hot_groups_sum_to_one() {
        for smiles in [
            "CC(=O)O",
            "c1ccncc1",
            "N[C@@H](C)C(=O)O",
            "[Na+]",
            "FC(F)(F)Cl",
        ] {
            let mol = parse_smiles(smiles).unwrap();
            for f in &mol.atom_features {
                let element: f64 = f[0..16].iter().sum();
                let degree: f64 = f[16..22].iter().sum();
                let hyb: f64 = f[24..30].iter().sum();
                let hcount: f64 = f[31..36].iter().sum();
                assert_eq!(element, 1.0);
                assert_eq!(degree, 1.0);
                assert_eq!(hyb, 1.0);
                assert_eq!(hcount, 1.0);
            }
            for f in &mol.bond_features {
                let order: f64 = f[0..4].iter().sum();
                let stereo: f64 = f[6..10].iter().sum();
                assert_eq!(order, 1.0);
                assert_eq!(stereo, 1.0);
            }
        }
    }

    #[test]
    fn unknown_element_maps_to_other_slot() {
        let mol = parse_smiles("[Na+]").unwrap();
        assert_eq!(mol.atom_features[0][15], 1.0);
    }
}
