//! Trajectory text files: `id r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::RigidTransform;

const ROTATION_TOLERANCE: f64 = 1e-6;

pub fn format_trajectory(poses: &[RigidTransform]) -> String {
    let mut out = String::new();
    for (id, pose) in poses.iter().enumerate() {
        let _ = write!(out, "{id}");
        for v in pose.to_row_major() {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_trajectory(poses: &[RigidTransform], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_trajectory(poses)).map_err(|e| Error::io(path, e))
}

/// Reads a trajectory. Ids must be `0..n` in order; blank lines and lines
/// starting with `#` are skipped.
pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Vec<RigidTransform>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, path)
}

pub(crate) fn parse_trajectory(text: &str, path: &Path) -> Result<Vec<RigidTransform>> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let id: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse(path, lineno, "expected integer pose id"))?;
        if id != poses.len() {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected pose id {}, found {id}", poses.len()),
            ));
        }
        let mut m = [0.0; 12];
        let mut count = 0;
        for tok in tokens {
            if count == 12 {
                return Err(Error::parse(path, lineno, "more than 12 matrix entries"));
            }
            m[count] = tok
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad number '{tok}'")))?;
            count += 1;
        }
        if count != 12 {
            return Err(Error::parse(path, lineno, format!("expected 12 matrix entries, found {count}")));
        }
        let pose = RigidTransform::from_row_major(&m);
        if !pose.is_finite() || pose.orthonormality_error() > ROTATION_TOLERANCE {
            return Err(Error::parse(path, lineno, "rotation block is not a proper rotation"));
        }
        poses.push(pose);
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::se3_exp;
    use nalgebra::Vector6;

    #[test]
    fn round_trip_is_bit_exact() {
        let poses: Vec<_> = (0..5)
            .map(|k| {
                let k = k as f64;
                se3_exp(&Vector6::new(0.1 * k, -0.2, 0.3 * k, 1.0 / 3.0, k, -0.7))
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        write_trajectory(&poses, &path).unwrap();
        assert_eq!(read_trajectory(&path).unwrap(), poses);
    }

    #[test]
    fn rejects_out_of_order_ids_and_bad_rotations() {
        let p = Path::new("t.txt");
        let bad_id = "1 1 0 0 0 0 1 0 0 0 0 1 0\n";
        assert!(matches!(parse_trajectory(bad_id, p), Err(Error::Parse { line: 1, .. })));
        let scaled = "0 2 0 0 0 0 1 0 0 0 0 1 0\n";
        assert!(parse_trajectory(scaled, p).is_err());
        let short = "0 1 0 0 0 0 1 0 0 0 0 1\n";
        assert!(parse_trajectory(short, p).is_err());
    }

    #[test]
    fn skips_comments() {
        let text = "# header\n\n0 1 0 0 0.5 0 1 0 0 0 0 1 0\n";
        let poses = parse_trajectory(text, Path::new("t")).unwrap();
        assert_eq!(poses.len(), 1);
        assert_eq!(poses[0].translation().x, 0.5);
    }
}
