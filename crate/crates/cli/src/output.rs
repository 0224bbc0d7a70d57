//! Atomic report emission with a provenance header.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "star";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_digest: String,
    pub seed: u64,
}

impl Meta {
    /// Digest over the canonical JSON form of everything that determines
    /// the results.
    pub fn new<T: Serialize>(experiment: &T, seed: u64) -> Self {
        let bytes = serde_json::to_vec(experiment).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        let config_digest = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self {
            tool: TOOL,
            version: VERSION,
            config_digest,
            seed,
        }
    }

    pub fn csv_header(&self) -> String {
        format!(
            "# {} {} config_sha256={} seed={}\n",
            self.tool, self.version, self.config_digest, self.seed
        )
    }
}

/// Writes `bytes` to a temp file in the target directory, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    meta: &'a Meta,
    #[serde(flatten)]
    body: &'a T,
}

/// JSON object with a leading `meta` field followed by the fields of `body`.
pub fn write_json<T: Serialize>(path: &Path, meta: &Meta, body: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&Envelope { meta, body })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// CSV preceded by a `#` provenance comment line. Records may differ in
/// length.
pub fn write_csv<R: Serialize>(
    path: &Path,
    meta: &Meta,
    header: Option<&[&str]>,
    rows: &[R],
) -> Result<()> {
    let mut buf = meta.csv_header().into_bytes();
    {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_writer(&mut buf);
        if let Some(h) = header {
            w.write_record(h)?;
        }
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    write_atomic(path, &buf)
}

/// Reads a headerless numeric CSV, one vector per line. Blank lines and
/// lines starting with `#` are skipped.
pub fn read_vectors(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: record {}", path.display(), i + 1))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().with_context(|| {
                    format!("{}: record {}: bad number {f:?}", path.display(), i + 1)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(row);
    }
    Ok(out)
}
