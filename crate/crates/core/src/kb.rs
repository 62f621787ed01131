//! File-backed layered knowledge base.
//!
//! Tables live under `<root>/layer<N>/<name>.csv` as header-plus-rows text
//! in the same minimal CSV dialect as the raw input (no quoting; fields must
//! not contain commas or newlines). Writers serialize deterministically,
//! publish via atomic rename, and get back a receipt carrying the row count
//! and a SHA-256 digest of the exact bytes, so identical logical content
//! always yields identical digests.
//!
//! Reads declare the layer of the producer doing the reading; a producer for
//! layer N may only read tables from layers strictly below N. That is the
//! hierarchical contract the whole pipeline is built on.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Layer index: 0 holds raw input, 1..=5 hold derived findings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Layer(u8);

pub const MAX_LAYER: u8 = 5;

impl Layer {
    pub fn new(index: u8) -> Result<Self> {
        if index > MAX_LAYER {
            return Err(Error::config(format!("layer index {index} out of range 0..=5")));
        }
        Ok(Layer(index))
    }

    pub fn index(&self) -> u8 {
        self.0
    }
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// In-memory table: header columns plus string rows, all sharing one width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::data(format!(
                "row width {} does not match {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        for field in &row {
            if field.contains(',') || field.contains('\n') || field.contains('\r') {
                return Err(Error::data(format!("field `{field}` contains a delimiter")));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Column index by name; tables are small enough for a linear scan.
    pub fn col(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::data(format!("table has no column `{name}`")))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::data("empty table file"))?;
        let columns: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
        let mut table = Table {
            columns,
            rows: Vec::new(),
        };
        for line in lines {
            let row: Vec<String> = line.split(',').map(|s| s.to_string()).collect();
            if row.len() != table.columns.len() {
                return Err(Error::data(format!("malformed table row `{line}`")));
            }
            table.rows.push(row);
        }
        Ok(table)
    }
}

/// Proof of a committed write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitReceipt {
    pub layer: Layer,
    pub table: String,
    pub rows: usize,
    /// SHA-256 of the serialized table, hex-encoded.
    pub digest: String,
}

/// Layered table store rooted at a directory.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    root: PathBuf,
}

impl KnowledgeBase {
    /// Opens (creating if necessary) a knowledge base at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(root.as_ref())?;
        Ok(KnowledgeBase { root: root.as_ref().to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn table_path(&self, layer: Layer, table: &str) -> PathBuf {
        self.root.join(format!("layer{}", layer.index())).join(format!("{table}.csv"))
    }

    /// Durably replaces `(layer, table)` with `rows`. The temp-file-then-
    /// rename dance means readers never observe a partial table.
    pub fn write(&self, layer: Layer, table: &str, rows: &Table) -> Result<CommitReceipt> {
        if table.is_empty() || !table.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::config(format!("invalid table name `{table}`")));
        }
        let bytes = rows.to_csv();
        let path = self.table_path(layer, table);
        let dir = path.parent().expect("table path has parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{table}.csv.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(CommitReceipt {
            layer,
            table: table.to_string(),
            rows: rows.len(),
            digest: hex_digest(bytes.as_bytes()),
        })
    }

    /// Reads `(layer, table)` on behalf of a producer for `reader_layer`.
    /// Refuses when `layer >= reader_layer`: a layer may not read its own
    /// tables or later ones. Consumers outside the pipeline (reports,
    /// exports, scoring) read with [`KnowledgeBase::read_any`].
    pub fn read(&self, layer: Layer, table: &str, reader_layer: u8) -> Result<Table> {
        if layer.index() >= reader_layer {
            return Err(Error::HierarchicalRead {
                layer: layer.index(),
                table: table.to_string(),
                reader: reader_layer,
            });
        }
        self.read_any(layer, table)
    }

    /// Unrestricted read, for code that sits after the whole pipeline.
    pub fn read_any(&self, layer: Layer, table: &str) -> Result<Table> {
        let path = self.table_path(layer, table);
        let text = fs::read_to_string(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingTable { layer: layer.index(), table: table.to_string() }
            } else {
                Error::Io(e)
            }
        })?;
        Table::from_csv(&text)
    }

    pub fn exists(&self, layer: Layer, table: &str) -> bool {
        self.table_path(layer, table).is_file()
    }

    /// Digest of the table as currently stored.
    pub fn digest(&self, layer: Layer, table: &str) -> Result<String> {
        let path = self.table_path(layer, table);
        let bytes = fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingTable { layer: layer.index(), table: table.to_string() }
            } else {
                Error::Io(e)
            }
        })?;
        Ok(hex_digest(&bytes))
    }

    /// Names of the tables currently stored in `layer`, sorted.
    pub fn tables(&self, layer: Layer) -> Result<BTreeSet<String>> {
        let dir = self.root.join(format!("layer{}", layer.index()));
        let mut out = BTreeSet::new();
        if !dir.is_dir() {
            return Ok(out);
        }
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(".csv") {
                if !stem.starts_with('.') {
                    out.insert(stem.to_string());
                }
            }
        }
        Ok(out)
    }

    /// Digest over every table of every layer, for whole-run determinism
    /// checks. Sorted by (layer, table) so the summary itself is stable.
    pub fn digest_all(&self) -> Result<Vec<(u8, String, String)>> {
        let mut out = Vec::new();
        for idx in 0..=MAX_LAYER {
            let layer = Layer::new(idx)?;
            for table in self.tables(layer)? {
                let digest = self.digest(layer, &table)?;
                out.push((idx, table, digest));
            }
        }
        Ok(out)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_table() -> Table {
        let mut t = Table::new(&["user_id", "score"]);
        t.push(vec!["u1".into(), "80".into()]).unwrap();
        t.push(vec!["u2".into(), "2273".into()]).unwrap();
        t
    }

    #[test]
    fn empty_table_write_yields_zero_count_receipt() {
        let dir = tempfile::tempdir().unwrap();
        let kb = KnowledgeBase::open(dir.path()).unwrap();
        let t = Table::new(&["a", "b"]);
        let r = kb.write(Layer::new(1).unwrap(), "empty", &t).unwrap();
        assert_eq!(r.rows, 0);
        assert_eq!(r.digest, hex_digest(b"a,b\n"));
    }

    #[test]
    fn rewriting_same_rows_gives_identical_digest() {
        let dir = tempfile::tempdir().unwrap();
        let kb = KnowledgeBase::open(dir.path()).unwrap();
        let t = sample_table();
        let r1 = kb.write(Layer::new(1).unwrap(), "scores", &t).unwrap();
        let r2 = kb.write(Layer::new(1).unwrap(), "scores", &t).unwrap();
        assert_eq!(r1.digest, r2.digest);
    }

    #[test]
    fn round_trip_preserves_every_field() {
        let dir = tempfile::tempdir().unwrap();
        let kb = KnowledgeBase::open(dir.path()).unwrap();
        let t = sample_table();
        kb.write(Layer::new(2).unwrap(), "homes", &t).unwrap();
        let back = kb.read(Layer::new(2).unwrap(), "homes", 3).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn hierarchical_read_refused_for_all_bad_layer_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let kb = KnowledgeBase::open(dir.path()).unwrap();
        for idx in 0..=MAX_LAYER {
            let layer = Layer::new(idx).unwrap();
            kb.write(layer, "t", &sample_table()).unwrap();
        }
        for table_layer in 0..=MAX_LAYER {
            for reader in 0..=MAX_LAYER {
                let res = kb.read(Layer::new(table_layer).unwrap(), "t", reader);
                if table_layer >= reader {
                    assert!(
                        matches!(res, Err(Error::HierarchicalRead { .. })),
                        "expected refusal for table layer {table_layer}, reader {reader}"
                    );
                } else {
                    assert!(res.is_ok(), "expected read for table layer {table_layer}, reader {reader}");
                }
            }
        }
    }

    #[test]
    fn missing_table_is_a_dependency_error() {
        let dir = tempfile::tempdir().unwrap();
        let kb = KnowledgeBase::open(dir.path()).unwrap();
        let res = kb.read(Layer::new(2).unwrap(), "homes", 3);
        assert!(matches!(res, Err(Error::MissingTable { layer: 2, .. })));
    }

    #[test]
    fn layer_two_table_unreadable_by_layer_one_producer() {
        let dir = tempfile::tempdir().unwrap();
        let kb = KnowledgeBase::open(dir.path()).unwrap();
        kb.write(Layer::new(2).unwrap(), "homes", &sample_table()).unwrap();
        let res = kb.read(Layer::new(2).unwrap(), "homes", 1);
        assert!(matches!(res, Err(Error::HierarchicalRead { layer: 2, reader: 1, .. })));
    }

    #[test]
    fn fields_with_delimiters_rejected() {
        let mut t = Table::new(&["a"]);
        assert!(t.push(vec!["x,y".into()]).is_err());
        assert!(t.push(vec!["x\ny".into()]).is_err());
    }

    #[test]
    fn layer_index_bounds() {
        assert!(Layer::new(5).is_ok());
        assert!(Layer::new(6).is_err());
    }

    #[test]
    fn replace_swaps_content_atomically_at_the_path_level() {
        let dir = tempfile::tempdir().unwrap();
        let kb = KnowledgeBase::open(dir.path()).unwrap();
        let layer = Layer::new(3).unwrap();
        kb.write(layer, "routes", &sample_table()).unwrap();
        let mut t2 = Table::new(&["user_id", "score"]);
        t2.push(vec!["u9".into(), "1".into()]).unwrap();
        kb.write(layer, "routes", &t2).unwrap();
        let back = kb.read_any(layer, "routes").unwrap();
        assert_eq!(back, t2);
        // No temp file left behind.
        let leftovers: Vec<_> = std::fs::read_dir(dir.path().join("layer3"))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.starts_with('.'))
            .collect();
        assert!(leftovers.is_empty(), "leftover temp files: {leftovers:?}");
    }
}
