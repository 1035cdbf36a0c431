use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use spintorque::config::Config;
use spintorque::io::CsvTable;

pub const MANIFEST: &str = "manifest.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename, so
/// readers never see a partial file.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

/// Output directory of one command run. Files are staged in memory and only
/// written by [`RunOutput::finish`], so a failed run leaves nothing behind.
pub struct RunOutput {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
    started: Instant,
}

pub struct RunInfo<'a> {
    pub command: &'a str,
    pub config: &'a Config,
    pub seed_source: &'a str,
    pub overrides: &'a [String],
    pub inputs: Vec<(String, String)>,
}

impl RunOutput {
    pub fn create(dir: &Path) -> Self {
        RunOutput { dir: dir.to_path_buf(), files: Vec::new(), started: Instant::now() }
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) {
        self.files.push((name.to_string(), bytes.to_vec()));
    }

    pub fn write_csv(&mut self, name: &str, table: &CsvTable) {
        self.write(name, &table.to_bytes())
    }

    /// Writes every staged file and then the manifest, replacing any earlier
    /// manifest in the directory.
    pub fn finish(self, info: &RunInfo) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        for (name, bytes) in &self.files {
            write_atomic(&self.dir, name, bytes)?;
        }
        let hashes: Vec<(String, String)> = self.files.iter().map(|(n, b)| (n.clone(), sha256_hex(b))).collect();
        let canonical = info.config.canonical();
        let mut m = Table::new();
        m.insert("tool_version".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
        m.insert("command".into(), Value::String(info.command.into()));
        m.insert("config_hash".into(), Value::String(sha256_hex(canonical.as_bytes())));
        m.insert("seed".into(), Value::Integer(info.config.params.sim().seed as i64));
        m.insert("seed_source".into(), Value::String(info.seed_source.into()));
        m.insert("overrides".into(), Value::Array(info.overrides.iter().map(|o| Value::String(o.clone())).collect()));
        m.insert("wall_time_s".into(), Value::Float(self.started.elapsed().as_secs_f64()));
        let files = |list: &[(String, String)]| {
            Value::Array(
                list.iter()
                    .map(|(n, h)| {
                        let mut t = Table::new();
                        t.insert("name".into(), Value::String(n.clone()));
                        t.insert("sha256".into(), Value::String(h.clone()));
                        Value::Table(t)
                    })
                    .collect(),
            )
        };
        m.insert("outputs".into(), files(&hashes));
        if !info.inputs.is_empty() {
            m.insert("inputs".into(), files(&info.inputs));
        }
        m.insert("config".into(), Value::String(canonical));
        write_atomic(&self.dir, MANIFEST, m.to_string().as_bytes())
    }
}
