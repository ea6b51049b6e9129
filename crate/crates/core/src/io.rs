//! File helpers shared by the exporters: atomic writes and stable float text.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Writes a file by filling a temporary sibling and renaming it into place.
pub fn atomic_write<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Formats a float with 17 significant digits; `NA` for missing values.
pub fn fmt_f64(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.16e}"),
        Some(v) => format!("{v}"),
        None => "NA".to_string(),
    }
}

pub fn parse_f64(s: &str) -> Option<f64> {
    match s.trim() {
        "NA" | "" => None,
        t => t.parse().ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for &x in &[1.0 / 3.0, 0.1, -2.5e-300, 12345.678901234567, f64::MIN_POSITIVE] {
            let s = fmt_f64(Some(x));
            assert_eq!(parse_f64(&s), Some(x), "{s}");
        }
        assert_eq!(fmt_f64(None), "NA");
        assert_eq!(parse_f64("NA"), None);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        atomic_write(&p, |w| Ok(w.write_all(b"first")?)).unwrap();
        atomic_write(&p, |w| Ok(w.write_all(b"second")?)).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
