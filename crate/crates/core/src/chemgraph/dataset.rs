use std::path::Path;

use super::{parse_smiles, FileError, MoleculeGraph};

/// One dataset row: a parsed molecule plus its (possibly masked) targets.
#[derive(Clone, Debug)]
pub struct DataRecord {
    pub mol: MoleculeGraph,
    /// `None` marks a missing target (masked in losses and metrics).
    pub targets: Vec<Option<f64>>,
    /// Zero-based row index in the source file (header excluded).
    pub row: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<DataRecord>,
    pub target_names: Vec<String>,
    /// Rows dropped because their SMILES failed to parse.
    pub skipped: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn task_count(&self) -> usize {
        self.target_names.len()
    }
}

/// Read a `smiles,<t1>,...,<tk>` CSV. Empty target cells are masked; rows
/// whose SMILES fails to parse are skipped and counted (order preserved for
/// the rest). Values must be plain numerics — no quoting dialects.
pub fn read_dataset(path: &Path) -> Result<Dataset, FileError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| {
        FileError::HeaderMismatch("empty file, expected `smiles,<targets...>` header".into())
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.is_empty() || !cols[0].eq_ignore_ascii_case("smiles") {
        return Err(FileError::HeaderMismatch(format!(
            "first column must be `smiles`, got `{}`",
            cols.first().unwrap_or(&"")
        )));
    }
    let target_names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();

    let mut records = Vec::new();
    let mut skipped = 0usize;
    let mut row = 0usize;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(FileError::MalformedLine {
                line: lineno + 1,
                detail: format!("{} fields, header has {}", fields.len(), cols.len()),
            });
        }
        let this_row = row;
        row += 1;
        let mol = match parse_smiles(fields[0]) {
            Ok(m) => m,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let mut targets = Vec::with_capacity(target_names.len());
        for (ci, field) in fields[1..].iter().enumerate() {
            if field.is_empty() {
                targets.push(None);
            } else {
                let v: f64 = field.parse().map_err(|_| FileError::MalformedLine {
                    line: lineno + 1,
                    detail: format!("bad numeric `{field}` in column `{}`", target_names[ci]),
                })?;
                targets.push(Some(v));
            }
        }
        records.push(DataRecord {
            mol,
            targets,
            row: this_row,
        });
    }
    Ok(Dataset {
        records,
        target_names,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str, contents: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("hamforge-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn bad_smiles_skipped_with_count() {
        let path = tmp("skip.csv", "smiles,sol\nCC,1.5\nC1CC,2.0\n");
        let ds = read_dataset(&path).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.skipped, 1);
        assert_eq!(ds.records[0].targets[0], Some(1.5));
    }

    #[test]
    fn masked_cell_is_none() {
        let path = tmp("mask.csv", "smiles,a,b\nCC,1.0,\nCO,,2.0\n");
        let ds = read_dataset(&path).unwrap();
        assert_eq!(ds.records[0].targets, vec![Some(1.0), None]);
        assert_eq!(ds.records[1].targets, vec![None, Some(2.0)]);
    }

    #[test]
    fn header_must_start_with_smiles() {
        let path = tmp("hdr.csv", "mol,sol\nCC,1.0\n");
        assert!(matches!(
            read_dataset(&path),
            Err(FileError::HeaderMismatch(_))
        ));
    }

    #[test]
    fn order_preserved() {
        let path = tmp("order.csv", "smiles,y\nC,0.0\nCC,1.0\nCCC,2.0\n");
        let ds = read_dataset(&path).unwrap();
        let sizes: Vec<usize> = ds.records.iter().map(|r| r.mol.atom_count()).collect();
        assert_eq!(sizes, vec![1, 2, 3]);
        let rows: Vec<usize> = ds.records.iter().map(|r| r.row).collect();
        assert_eq!(rows, vec![0, 1, 2]);
    }
}
