use std::path::Path;

use hamforge_core::chemgraph::{read_dataset, read_sdf, read_xyz, Dataset};
use hamforge_core::diffmath::Tensor;
use hamforge_core::trainer::{ConformerRecord, FpRecord};

use crate::CliError;

/// Reference conformations for the rows of a dataset CSV, keyed by row
/// index: either a concatenated SDF (record k = row k) or a directory of
/// `.xyz` files taken in lexicographic order.
pub fn load_conformations(path: &Path, expected: usize) -> Result<Vec<Vec<[f64; 3]>>, CliError> {
    let confs: Vec<(Vec<String>, Vec<[f64; 3]>)> = if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "xyz").unwrap_or(false))
            .collect();
        files.sort();
        let mut out = Vec::with_capacity(files.len());
        for f in files {
            let frame =
                read_xyz(&f).map_err(|e| CliError::Data(format!("{}: {e}", f.display())))?;
            out.push((frame.elements, frame.coords));
        }
        out
    } else {
        read_sdf(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
            .into_iter()
            .map(|m| {
                let coords = m.reference_conformation.clone().unwrap_or_default();
                let elements = m.atoms.iter().map(|a| a.element.clone()).collect();
                (elements, coords)
            })
            .collect()
    };
    if confs.len() != expected {
        return Err(CliError::Data(format!(
            "{} conformations for {} dataset rows",
            confs.len(),
            expected
        )));
    }
    Ok(confs.into_iter().map(|(_, coords)| coords).collect())
}

fn conformation_tensor(
    row: usize,
    mol_elements: &[String],
    coords: &[[f64; 3]],
) -> Result<Tensor, CliError> {
    if coords.len() != mol_elements.len() {
        return Err(CliError::Data(format!(
            "row {row}: conformation has {} atoms, molecule has {}",
            coords.len(),
            mol_elements.len()
        )));
    }
    let flat: Vec<f64> = coords.iter().flatten().copied().collect();
    Ok(Tensor::matrix(mol_elements.len(), 3, flat))
}

/// Dataset rows paired with conformations for engine training. Rows whose
/// SMILES failed to parse are skipped together with their conformations.
pub fn load_conformer_records(
    data: &Path,
    conf: &Path,
    adj_k: usize,
) -> Result<(Dataset, Vec<ConformerRecord>), CliError> {
    let ds = read_dataset(data).map_err(|e| CliError::Data(format!("{}: {e}", data.display())))?;
    let total_rows = ds.records.len() + ds.skipped;
    let confs = load_conformations(conf, total_rows)?;
    let mut records = Vec::with_capacity(ds.records.len());
    for rec in &ds.records {
        let elements: Vec<String> = rec.mol.atoms.iter().map(|a| a.element.clone()).collect();
        let coords = &confs[rec.row];
        let reference = conformation_tensor(rec.row, &elements, coords)?;
        records.push(ConformerRecord::new(rec.mol.clone(), reference, adj_k));
    }
    Ok((ds, records))
}

/// Dataset rows (targets) with optional conformations for fingerprint work.
pub fn load_fp_records(
    data: &Path,
    conf: Option<&Path>,
) -> Result<(Dataset, Vec<FpRecord>), CliError> {
    let ds = read_dataset(data).map_err(|e| CliError::Data(format!("{}: {e}", data.display())))?;
    let confs = match conf {
        Some(path) => Some(load_conformations(path, ds.records.len() + ds.skipped)?),
        None => None,
    };
    let mut records = Vec::with_capacity(ds.records.len());
    for rec in &ds.records {
        let conformation = match &confs {
            Some(confs) => {
                let elements: Vec<String> =
                    rec.mol.atoms.iter().map(|a| a.element.clone()).collect();
                Some(conformation_tensor(rec.row, &elements, &confs[rec.row])?)
            }
            None => None,
        };
        records.push(FpRecord {
            mol: rec.mol.clone(),
            targets: rec.targets.clone(),
            conformation,
        });
    }
    Ok((ds, records))
}
