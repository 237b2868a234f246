use std::path::Path;

use super::elements::atomic_mass;
use super::{
    Atom, Bond, BondOrder, BondStereo, Chirality, FileError, Hybridization, MoleculeGraph,
};

/// Read a (possibly concatenated) SDF / MOL file with V2000 connection
/// tables. Coordinates are taken as angstrom.
///
/// Explicit hydrogens are dropped: each one increments `num_hydrogens` on its
/// heavy neighbor and the heavy-atom conformation is kept, so downstream
/// geometry losses always see heavy-atom point sets. Bonds with order 4 are
/// aromatic and mark both endpoints aromatic.
pub fn read_sdf(path: &Path) -> Result<Vec<MoleculeGraph>, FileError> {
    let text = std::fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().collect();
    let mut mols = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        // Skip blank padding between records.
        while i < lines.len() && lines[i].trim().is_empty() {
            i += 1;
        }
        if i >= lines.len() {
            break;
        }
        let record_start = i;
        // Header: name, program, comment, then the counts line.
        if i + 3 >= lines.len() {
            return Err(FileError::TruncatedRecord(record_start + 1));
        }
        let counts = lines[i + 3];
        if counts.contains("V3000") {
            return Err(FileError::UnsupportedVersion("V3000".into()));
        }
        if !counts.contains("V2000") {
            return Err(FileError::MalformedLine {
                line: i + 4,
                detail: format!("expected V2000 counts line, got `{counts}`"),
            });
        }
        let natoms = fixed_or_ws_int(counts, 0).ok_or(FileError::MalformedLine {
            line: i + 4,
            detail: "bad atom count".into(),
        })?;
        let nbonds = fixed_or_ws_int(counts, 1).ok_or(FileError::MalformedLine {
            line: i + 4,
            detail: "bad bond count".into(),
        })?;
        i += 4;

        if i + natoms + nbonds > lines.len() {
            return Err(FileError::TruncatedRecord(record_start + 1));
        }

        let mut elements = Vec::with_capacity(natoms);
        let mut coords = Vec::with_capacity(natoms);
        for k in 0..natoms {
            let line = lines[i + k];
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() < 4 {
                return Err(FileError::MalformedLine {
                    line: i + k + 1,
                    detail: "atom line needs `x y z element`".into(),
                });
            }
            let x: f64 = parts[0].parse().map_err(|_| FileError::MalformedLine {
                line: i + k + 1,
                detail: format!("bad coordinate `{}`", parts[0]),
            })?;
            let y: f64 = parts[1].parse().map_err(|_| FileError::MalformedLine {
                line: i + k + 1,
                detail: format!("bad coordinate `{}`", parts[1]),
            })?;
            let z: f64 = parts[2].parse().map_err(|_| FileError::MalformedLine {
                line: i + k + 1,
                detail: format!("bad coordinate `{}`", parts[2]),
            })?;
            elements.push(parts[3].to_string());
            coords.push([x, y, z]);
        }
        i += natoms;

        let mut raw_bonds = Vec::with_capacity(nbonds);
        for k in 0..nbonds {
            let line = lines[i + k];
            let a = bond_field(line, 0);
            let b = bond_field(line, 1);
            let t = bond_field(line, 2);
            match (a, b, t) {
                (Some(a), Some(b), Some(t)) if a >= 1 && b >= 1 && a <= natoms && b <= natoms => {
                    raw_bonds.push((a - 1, b - 1, t));
                }
                _ => {
                    return Err(FileError::MalformedLine {
                        line: i + k + 1,
                        detail: format!("bad bond line `{line}`"),
                    })
                }
            }
        }
        i += nbonds;

        // Properties block: consume M CHG, ignore the rest up to M END.
        let mut charges: Vec<i32> = vec![0; natoms];
        let mut saw_end = false;
        while i < lines.len() {
            let line = lines[i];
            i += 1;
            if line.starts_with("M  END") || line.starts_with("M END") {
                saw_end = true;
                break;
            }
            if line.starts_with("$$$$") {
                // Record without a properties terminator.
                saw_end = true;
                i -= 1;
                break;
            }
            if line.starts_with("M  CHG") {
                let parts: Vec<&str> = line.split_whitespace().collect();
                // M  CHG  n  idx1 chg1 idx2 chg2 ...
                let mut it = parts.iter().skip(3);
                while let (Some(idx), Some(chg)) = (it.next(), it.next()) {
                    if let (Ok(idx), Ok(chg)) = (idx.parse::<usize>(), chg.parse::<i32>()) {
                        if idx >= 1 && idx <= natoms {
                            charges[idx - 1] = chg;
                        }
                    }
                }
            }
        }
        if !saw_end {
            return Err(FileError::TruncatedRecord(record_start + 1));
        }
        // Skip data items up to the record separator.
        while i < lines.len() && !lines[i].starts_with("$$$$") {
            i += 1;
        }
        if i < lines.len() {
            i += 1; // consume $$$$
        }

        mols.push(build_molecule(elements, coords, raw_bonds, charges)?);
    }
    Ok(mols)
}

/// Counts-line fields are fixed-width 3-char columns, but files in the wild
/// are often space-delimited; try fixed width first, fall back to whitespace.
fn fixed_or_ws_int(line: &str, field: usize) -> Option<usize> {
    let start = field * 3;
    if line.len() >= start + 3 {
        if let Ok(v) = line[start..start + 3].trim().parse::<usize>() {
            return Some(v);
        }
    }
    line.split_whitespace().nth(field)?.parse().ok()
}

fn bond_field(line: &str, field: usize) -> Option<usize> {
    // Prefer whitespace tokens (covers the common pretty-printed files);
    // fall back to strict fixed-width columns for packed indices.
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() >= 3 {
        if let Ok(v) = toks[field].parse::<usize>() {
            return Some(v);
        }
    }
    let start = field * 3;
    if line.len() >= start + 3 {
        return line[start..start + 3].trim().parse().ok();
    }
    None
}

fn build_molecule(
    elements: Vec<String>,
    coords: Vec<[f64; 3]>,
    raw_bonds: Vec<(usize, usize, usize)>,
    charges: Vec<i32>,
) -> Result<MoleculeGraph, FileError> {
    let n = elements.len();
    let is_h: Vec<bool> = elements.iter().map(|e| e == "H").collect();

    // Map heavy atoms to new indices; hydrogens fold into neighbor counts.
    let mut new_index = vec![usize::MAX; n];
    let mut heavy = 0usize;
    for (k, &h) in is_h.iter().enumerate() {
        if !h {
            new_index[k] = heavy;
            heavy += 1;
        }
    }
    let mut h_counts = vec![0u8; heavy];
    let mut aromatic = vec![false; heavy];
    let mut bonds = Vec::new();
    for (a, b, order_code) in raw_bonds {
        match (is_h[a], is_h[b]) {
            (true, true) => {} // H-H bond: dropped entirely
            (true, false) => {
                let nb = new_index[b];
                h_counts[nb] = (h_counts[nb] + 1).min(4);
            }
            (false, true) => {
                let na = new_index[a];
                h_counts[na] = (h_counts[na] + 1).min(4);
            }
            (false, false) => {
                let order = match order_code {
                    1 => BondOrder::Single,
                    2 => BondOrder::Double,
                    3 => BondOrder::Triple,
                    4 => BondOrder::Aromatic,
                    other => {
                        return Err(FileError::MalformedLine {
                            line: 0,
                            detail: format!("unsupported bond order code {other}"),
                        })
                    }
                };
                let (na, nb) = (new_index[a], new_index[b]);
                if order == BondOrder::Aromatic {
                    aromatic[na] = true;
                    aromatic[nb] = true;
                }
                bonds.push(Bond {
                    endpoints: (na, nb),
                    order,
                    is_conjugated: false,
                    in_ring: false,
                    stereo: BondStereo::None,
                });
            }
        }
    }

    let mut atoms = Vec::with_capacity(heavy);
    let mut heavy_coords = Vec::with_capacity(heavy);
    for k in 0..n {
        if is_h[k] {
            continue;
        }
        let idx = new_index[k];
        let mass = atomic_mass(&elements[k]).ok_or_else(|| FileError::MalformedLine {
            line: 0,
            detail: format!("unknown element `{}`", elements[k]),
        })?;
        atoms.push(Atom {
            element: elements[k].clone(),
            relative_mass: mass,
            degree: 0,
            formal_charge: charges[k],
            is_aromatic: aromatic[idx],
            num_hydrogens: h_counts[idx],
            hybridization: Hybridization::Other,
            chirality: Chirality::None,
        });
        heavy_coords.push(coords[k]);
    }

    let order: Vec<usize> = (0..heavy).collect();
    Ok(MoleculeGraph::assemble(
        atoms,
        bonds,
        order,
        Some(heavy_coords),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str, contents: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("hamforge-sdf-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    const METHANE: &str = "\
methane
  test
comment
  5  4  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0
    0.6287    0.6287    0.6287 H   0  0
   -0.6287   -0.6287    0.6287 H   0  0
   -0.6287    0.6287   -0.6287 H   0  0
    0.6287   -0.6287   -0.6287 H   0  0
  1  2  1  0
  1  3  1  0
  1  4  1  0
  1  5  1  0
M  END
$$$$
";

    #[test]
    fn single_methane_record() {
        let path = tmp("methane.sdf", METHANE);
        let mols = read_sdf(&path).unwrap();
        assert_eq!(mols.len(), 1);
        let mol = &mols[0];
        assert_eq!(mol.atom_count(), 1);
        assert_eq!(mol.atoms[0].num_hydrogens, 4);
        let conf = mol.reference_conformation.as_ref().unwrap();
        assert_eq!(conf.len(), 1);
        assert_eq!(conf[0], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_concatenated_records() {
        let two = format!("{METHANE}{METHANE}");
        let path = tmp("two.sdf", &two);
        let mols = read_sdf(&path).unwrap();
        assert_eq!(mols.len(), 2);
    }

    #[test]
    fn aromatic_bond_code_four() {
        let benzene = "\
benzene-heavy
  test

  6  6  0  0  0  0  0  0  0  0999 V2000
    1.3900    0.0000    0.0000 C   0  0
    0.6950    1.2037    0.0000 C   0  0
   -0.6950    1.2037    0.0000 C   0  0
   -1.3900    0.0000    0.0000 C   0  0
   -0.6950   -1.2037    0.0000 C   0  0
    0.6950   -1.2037    0.0000 C   0  0
  1  2  4  0
  2  3  4  0
  3  4  4  0
  4  5  4  0
  5  6  4  0
  6  1  4  0
M  END
$$$$
";
        let path = tmp("benzene.sdf", benzene);
        let mols = read_sdf(&path).unwrap();
        let mol = &mols[0];
        assert!(mol.atoms.iter().all(|a| a.is_aromatic));
        assert!(mol
            .bonds
            .iter()
            .all(|b| b.order == BondOrder::Aromatic && b.in_ring));
    }

    #[test]
    fn truncated_record_rejected() {
        let truncated = "\
broken
  test

  3  2  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0
";
        let path = tmp("broken.sdf", truncated);
        assert!(matches!(
            read_sdf(&path),
            Err(FileError::TruncatedRecord(_))
        ));
    }

    #[test]
    fn v3000_rejected() {
        let v3 = "\
modern
  test

  0  0  0  0  0  0  0  0  0  0999 V3000
M  END
$$$$
";
        let path = tmp("v3000.sdf", v3);
        assert!(matches!(
            read_sdf(&path),
            Err(FileError::UnsupportedVersion(_))
        ));
    }

    #[test]
    fn zero_bond_record_is_fine_for_single_atoms() {
        let lone = "\
neon-ish carbon
  test

  1  0  0  0  0  0  0  0  0  0999 V2000
    0.1000    0.2000    0.3000 C   0  0
M  END
$$$$
";
        let path = tmp("lone.sdf", lone);
        let mols = read_sdf(&path).unwrap();
        assert_eq!(mols[0].atom_count(), 1);
        assert_eq!(mols[0].bond_count(), 0);
    }
}
