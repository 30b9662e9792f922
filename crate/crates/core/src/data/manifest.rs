//! `relative_image_path<TAB>caption` manifests.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Image, Sample};
use crate::error::{Error, Result};

/// Parse a manifest and load every referenced image at `size x size`.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn load_manifest(path: &Path, size: usize) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("reading manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (rel, caption) = line.split_once('\t').ok_or_else(|| Error::MalformedLine {
            line: line_no,
            detail: "missing TAB separator".into(),
        })?;
        let caption = caption.trim();
        if rel.trim().is_empty() || caption.is_empty() {
            return Err(Error::MalformedLine {
                line: line_no,
                detail: "empty path or caption".into(),
            });
        }
        let img_path = base.join(rel.trim());
        if !img_path.is_file() {
            return Err(Error::MissingImage(img_path));
        }
        samples.push(Sample {
            image: Image::load(&img_path, size, size)?,
            caption: caption.to_string(),
            class_id: None,
        });
    }
    Ok(samples)
}

/// Write `samples` as PNGs under `dir/images/` plus `dir/manifest.tsv`.
pub fn write_manifest(samples: &[Sample], dir: &Path) -> Result<std::path::PathBuf> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir)?;
    let manifest = dir.join("manifest.tsv");
    let mut out = std::io::BufWriter::new(fs::File::create(&manifest)?);
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("images/{i:05}.png");
        s.image.save_png(&dir.join(&rel))?;
        let caption = s.caption.replace(['\t', '\n', '\r'], " ");
        writeln!(out, "{rel}\t{caption}")?;
    }
    out.flush()?;
    Ok(manifest)
}
