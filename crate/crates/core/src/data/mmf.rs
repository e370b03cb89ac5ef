use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::interactions::InteractionDataset;

pub const MMF_MAGIC: &[u8; 4] = b"MMF1";

/// Which feature stream a matrix belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Visual,
    Textual,
}

impl Modality {
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Textual => "textual",
        }
    }
}

/// Item-level feature matrix, rows aligned with the dense item indexing of
/// an `InteractionDataset`. Stored as 32-bit floats on disk, widened to
/// f64 in memory.
#[derive(Clone, Debug)]
pub struct FeatureMatrix {
    pub modality: Modality,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(modality: Modality, rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(rows * cols, values.len(), "feature matrix shape mismatch");
        assert!(
            values.iter().all(|v| v.is_finite()),
            "feature matrix must be finite"
        );
        FeatureMatrix {
            modality,
            rows,
            cols,
            values,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows gathered into one flat buffer (used to build batch tensors).
    pub fn gather(&self, indices: &[u32]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            out.extend_from_slice(self.row(i as usize));
        }
        out
    }
}

/// Writes `MMF1 | u32 rows | u32 cols | rows*cols f32` little-endian,
/// row-major. Rejects non-finite values.
pub fn write_matrix(path: &Path, rows: usize, cols: usize, values: &[f32]) -> Result<()> {
    assert_eq!(rows * cols, values.len(), "write_matrix shape mismatch");
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "refusing to write non-finite value at flat index {bad} of {}",
            path.display()
        )));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MMF_MAGIC).map_err(io)?;
    w.write_all(&(rows as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(cols as u32).to_le_bytes()).map_err(io)?;
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a matrix written by `write_matrix`.
pub fn read_matrix(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != MMF_MAGIC {
        return Err(Error::Data(format!(
            "{} is not an MMF1 container (bad magic)",
            path.display()
        )));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + rows * cols * 4;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "{}: expected {expected} bytes for {rows}x{cols}, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(rows * cols);
    for chunk in bytes[12..].chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok((rows, cols, values))
}

/// Sidecar id map: `item_id<TAB>row_index` per line.
pub fn write_id_map(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = String::new();
    for (row, id) in ids.iter().enumerate() {
        text.push_str(id);
        text.push('\t');
        text.push_str(&row.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_id_map(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or("").to_string();
        let row = fields
            .next()
            .and_then(|r| r.parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: "expected item_id<TAB>row_index".to_string(),
            })?;
        out.push((id, row));
    }
    Ok(out)
}

/// The sidecar path convention: `foo.mmf` -> `foo.items.tsv`.
pub fn sidecar_path(matrix_path: &Path) -> std::path::PathBuf {
    matrix_path.with_extension("items.tsv")
}

/// Loads a feature container and reorders its rows to the dataset's dense
/// item indexing. Items missing from the sidecar map are an error listing
/// the absent ids.
pub fn load_features(
    path: &Path,
    modality: Modality,
    dataset: &InteractionDataset,
) -> Result<FeatureMatrix> {
    let (rows, cols, raw) = read_matrix(path)?;
    let id_map = read_id_map(&sidecar_path(path))?;
    let mut by_id = std::collections::HashMap::new();
    for (id, row) in &id_map {
        if *row >= rows {
            return Err(Error::Data(format!(
                "{}: sidecar maps {id:?} to row {row}, but the matrix has {rows} rows",
                path.display()
            )));
        }
        by_id.insert(id.as_str(), *row);
    }
    let mut missing = Vec::new();
    let mut values = Vec::with_capacity(dataset.n_items() * cols);
    for item in &dataset.items {
        match by_id.get(item.as_str()) {
            Some(&row) => {
                values.extend(raw[row * cols..(row + 1) * cols].iter().map(|&v| v as f64))
            }
            None => missing.push(item.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{}: features missing for {} item(s): {}",
            path.display(),
            missing.len(),
            missing.join(", ")
        )));
    }
    Ok(FeatureMatrix::new(
        modality,
        dataset.n_items(),
        cols,
        values,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::interactions::{parse_interactions, split_811};
    use crate::numcore::Rng;

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mmf");
        let values: Vec<f32> = vec![1.5, -2.25, 0.0, 3.75, f32::MIN_POSITIVE, 1e30];
        write_matrix(&path, 2, 3, &values).unwrap();
        let (r, c, back) = read_matrix(&path).unwrap();
        assert_eq!((r, c), (2, 3));
        assert_eq!(
            values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn nan_is_rejected_at_write_time() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mmf");
        let err = write_matrix(&path, 1, 2, &[1.0, f32::NAN]).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("not.mmf");
        std::fs::write(&path, b"XXXX\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x80\x3f").unwrap();
        let err = read_matrix(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    fn tiny_dataset() -> InteractionDataset {
        let mut text = String::new();
        for u in 0..5 {
            for i in 0..3 {
                text.push_str(&format!("u{u}\ti{i}\n"));
            }
        }
        let rows = parse_interactions(&text, "mem").unwrap();
        split_811(&rows, &mut Rng::new(1))
    }

    #[test]
    fn features_reorder_to_vocabulary() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.mmf");
        // write rows in an order different from the vocab order
        write_matrix(&path, 3, 2, &[20.0, 21.0, 0.0, 1.0, 10.0, 11.0]).unwrap();
        write_id_map(
            &sidecar_path(&path),
            &["i2".to_string(), "i0".to_string(), "i1".to_string()],
        )
        .unwrap();
        let fm = load_features(&path, Modality::Visual, &ds).unwrap();
        let i0 = ds.item_idx("i0").unwrap() as usize;
        let i2 = ds.item_idx("i2").unwrap() as usize;
        assert_eq!(fm.row(i0), &[0.0, 1.0]);
        assert_eq!(fm.row(i2), &[20.0, 21.0]);
    }

    #[test]
    fn missing_items_are_listed() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.mmf");
        write_matrix(&path, 2, 2, &[0.0, 1.0, 10.0, 11.0]).unwrap();
        write_id_map(
            &sidecar_path(&path),
            &["i0".to_string(), "i1".to_string()],
        )
        .unwrap();
        let err = load_features(&path, Modality::Visual, &ds).unwrap_err();
        assert!(err.to_string().contains("i2"), "{err}");
    }
}
