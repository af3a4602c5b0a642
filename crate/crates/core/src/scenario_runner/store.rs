use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{CellKey, RunManifest, RunnerError, SimulationRecord};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const PROMPTS_DIR: &str = "prompts";

/// A run directory: `manifest.json`, `records.jsonl`, optional `prompts/`.
#[derive(Debug)]
pub struct RunStore {
    dir: PathBuf,
    writer: Mutex<Option<File>>,
}

fn io_err(path: &Path, e: std::io::Error) -> RunnerError {
    RunnerError::Store(format!("{}: {e}", path.display()))
}

impl RunStore {
    /// Opens (or creates) a run directory for `manifest`. An existing
    /// manifest must describe the same run. Nothing is written for an
    /// invalid manifest.
    pub fn open(dir: impl AsRef<Path>, manifest: &RunManifest) -> Result<Self, RunnerError> {
        manifest.validate()?;
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let mpath = dir.join(MANIFEST_FILE);
        if mpath.exists() {
            let existing = read_manifest(&dir)?;
            if !existing.same_run(manifest) {
                return Err(RunnerError::ManifestMismatch(format!(
                    "{} holds run '{}' with different settings",
                    dir.display(),
                    existing.run_id
                )));
            }
        } else {
            let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
            write_atomic(&mpath, text.as_bytes())?;
        }
        let store = RunStore {
            dir,
            writer: Mutex::new(None),
        };
        store.repair_tail()?;
        Ok(store)
    }

    /// Opens an existing run directory read-only.
    pub fn existing(dir: impl AsRef<Path>) -> Result<(RunManifest, Vec<SimulationRecord>), RunnerError> {
        let dir = dir.as_ref();
        let manifest = read_manifest(dir)?;
        let records = read_records(&dir.join(RECORDS_FILE))?;
        Ok((manifest, records))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records_path(&self) -> PathBuf {
        self.dir.join(RECORDS_FILE)
    }

    /// Drops a partially written final line left by an interrupted append.
    fn repair_tail(&self) -> Result<(), RunnerError> {
        let path = self.records_path();
        let Ok(bytes) = std::fs::read(&path) else {
            return Ok(());
        };
        if bytes.is_empty() || bytes.ends_with(b"\n") {
            return Ok(());
        }
        let keep = bytes.iter().rposition(|b| *b == b'\n').map(|i| i + 1).unwrap_or(0);
        log::warn!("{}: dropping torn trailing record", path.display());
        let f = OpenOptions::new().write(true).open(&path).map_err(|e| io_err(&path, e))?;
        f.set_len(keep as u64).map_err(|e| io_err(&path, e))
    }

    pub fn load_records(&self) -> Result<Vec<SimulationRecord>, RunnerError> {
        read_records(&self.records_path())
    }

    /// Appends one record as a single line write.
    pub fn append(&self, record: &SimulationRecord) -> Result<(), RunnerError> {
        let path = self.records_path();
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let mut guard = self.writer.lock().unwrap();
        if guard.is_none() {
            *guard = Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| io_err(&path, e))?,
            );
        }
        let f = guard.as_mut().expect("writer opened");
        f.write_all(line.as_bytes()).and_then(|_| f.flush()).map_err(|e| io_err(&path, e))
    }

    /// Rewrites `records.jsonl` sorted by cell key, keeping the first record per key.
    pub fn compact(&self) -> Result<(), RunnerError> {
        *self.writer.lock().unwrap() = None;
        let mut by_key: BTreeMap<CellKey, SimulationRecord> = BTreeMap::new();
        for r in self.load_records()? {
            by_key.entry(r.key()).or_insert(r);
        }
        let mut text = String::new();
        for r in by_key.values() {
            text.push_str(&serde_json::to_string(r).expect("record serializes"));
            text.push('\n');
        }
        write_atomic(&self.records_path(), text.as_bytes())
    }

    pub fn dump_prompt(&self, digest: &str, bundle: &crate::prompt_forge::PromptBundle) -> Result<(), RunnerError> {
        let dir = self.dir.join(PROMPTS_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let path = dir.join(format!("{digest}.json"));
        if path.exists() {
            return Ok(());
        }
        write_atomic(&path, serde_json::to_string_pretty(bundle).expect("bundle serializes").as_bytes())
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, RunnerError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| RunnerError::Store(format!("{}: {e}", path.display())))
}

/// Reads records, skipping a torn final line.
pub fn read_records(path: &Path) -> Result<Vec<SimulationRecord>, RunnerError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path, e)),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| io_err(path, e))?;
    let mut out = Vec::with_capacity(lines.len());
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i == last => log::warn!("{}: ignoring torn final line", path.display()),
            Err(e) => return Err(RunnerError::Store(format!("{} line {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunnerError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}
