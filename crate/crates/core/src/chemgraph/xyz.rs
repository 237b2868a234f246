use std::io::Write;
use std::path::Path;

use super::FileError;

/// One XYZ frame: count line, verbatim comment line, then `El x y z` rows
/// (angstrom, written with 8 decimal places so round-trips are stable well
/// below 1e-6).
#[derive(Clone, Debug, PartialEq)]
pub struct XyzFrame {
    pub comment: String,
    pub elements: Vec<String>,
    pub coords: Vec<[f64; 3]>,
}

pub fn write_xyz(path: &Path, frame: &XyzFrame) -> Result<(), FileError> {
    write_xyz_frames(path, std::slice::from_ref(frame))
}

/// Multi-frame XYZ (frames concatenated), e.g. one frame per engine step.
pub fn write_xyz_frames(path: &Path, frames: &[XyzFrame]) -> Result<(), FileError> {
    let mut out = String::new();
    for frame in frames {
        assert_eq!(frame.elements.len(), frame.coords.len());
        out.push_str(&format!("{}\n", frame.elements.len()));
        out.push_str(&frame.comment);
        out.push('\n');
        for (el, c) in frame.elements.iter().zip(&frame.coords) {
            out.push_str(&format!("{el} {:.8} {:.8} {:.8}\n", c[0], c[1], c[2]));
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_xyz(path: &Path) -> Result<XyzFrame, FileError> {
    let frames = read_xyz_frames(path)?;
    frames
        .into_iter()
        .next()
        .ok_or_else(|| FileError::MalformedLine {
            line: 1,
            detail: "empty XYZ file".into(),
        })
}

pub fn read_xyz_frames(path: &Path) -> Result<Vec<XyzFrame>, FileError> {
    let text = std::fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().collect();
    let mut frames = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let count: usize = lines[i]
            .trim()
            .parse()
            .map_err(|_| FileError::MalformedLine {
                line: i + 1,
                detail: format!("expected atom count, got `{}`", lines[i]),
            })?;
        if i + 1 >= lines.len() {
            return Err(FileError::CountMismatch {
                line: i + 1,
                detail: "missing comment line".into(),
            });
        }
        let comment = lines[i + 1].to_string();
        let mut elements = Vec::with_capacity(count);
        let mut coords = Vec::with_capacity(count);
        for k in 0..count {
            let ln = i + 2 + k;
            let line = lines.get(ln).ok_or(FileError::CountMismatch {
                line: i + 1,
                detail: format!("declared {count} atoms but file ends at line {ln}"),
            })?;
            let mut parts = line.split_whitespace();
            let el = parts.next().ok_or_else(|| FileError::MalformedLine {
                line: ln + 1,
                detail: "empty atom line".into(),
            })?;
            let mut xyz = [0.0f64; 3];
            for slot in xyz.iter_mut() {
                let tok = parts.next().ok_or_else(|| FileError::MalformedLine {
                    line: ln + 1,
                    detail: "expected `El x y z`".into(),
                })?;
                *slot = tok.parse().map_err(|_| FileError::MalformedLine {
                    line: ln + 1,
                    detail: format!("bad coordinate `{tok}`"),
                })?;
            }
            elements.push(el.to_string());
            coords.push(xyz);
        }
        // Extra atom rows beyond the declared count are a count mismatch.
        if let Some(extra) = lines.get(i + 2 + count) {
            let looks_like_atom =
                extra.split_whitespace().count() >= 4 && extra.trim().parse::<usize>().is_err();
            if looks_like_atom {
                return Err(FileError::CountMismatch {
                    line: i + 1,
                    detail: format!("declared {count} atoms but more atom lines follow"),
                });
            }
        }
        frames.push(XyzFrame {
            comment,
            elements,
            coords,
        });
        i += 2 + count;
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("hamforge-xyz-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn roundtrip_three_atoms() {
        let frame = XyzFrame {
            comment: "water-ish test frame".into(),
            elements: vec!["O".into(), "H".into(), "H".into()],
            coords: vec![
                [0.0, 0.0, 0.117_6],
                [0.0, 0.755_45, -0.470_4],
                [0.0, -0.755_45, -0.470_4],
            ],
        };
        let path = tmp("roundtrip.xyz");
        write_xyz(&path, &frame).unwrap();
        let back = read_xyz(&path).unwrap();
        assert_eq!(back.comment, frame.comment);
        assert_eq!(back.elements, frame.elements);
        for (a, b) in back.coords.iter().zip(&frame.coords) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn count_mismatch_detected() {
        let path = tmp("badcount.xyz");
        std::fs::write(&path, "2\nc\nC 0 0 0\nC 1 0 0\nC 2 0 0\n").unwrap();
        assert!(matches!(
            read_xyz(&path),
            Err(FileError::CountMismatch { .. })
        ));
    }

    #[test]
    fn truncated_file_detected() {
        let path = tmp("short.xyz");
        std::fs::write(&path, "3\nc\nC 0 0 0\n").unwrap();
        assert!(matches!(
            read_xyz(&path),
            Err(FileError::CountMismatch { .. })
        ));
    }

    #[test]
    fn multi_frame_roundtrip() {
        let f1 = XyzFrame {
            comment: "step 0".into(),
            elements: vec!["C".into()],
            coords: vec![[0.0, 0.0, 0.0]],
        };
        let f2 = XyzFrame {
            comment: "step 1".into(),
            elements: vec!["C".into()],
            coords: vec![[0.5, 0.0, 0.0]],
        };
        let path = tmp("traj.xyz");
        write_xyz_frames(&path, &[f1.clone(), f2.clone()]).unwrap();
        let back = read_xyz_frames(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].comment, "step 0");
        assert_eq!(back[1].coords[0][0], 0.5);
    }
}
