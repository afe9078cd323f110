//! On-disk layout of a self-training run.
//!
//! ```text
//! <run>/
//!   config.json          snapshot of everything needed to rerun
//!   records.jsonl        one IterationRecord per line
//!   checkpoints/iter-0001.ckpt ...
//!                        model after each copy step
//!   best                 file name of the best checkpoint
//!   run.lock             present while a process writes the run
//! ```
//!
//! A checkpoint is written before its record and the best marker after it,
//! so a record always has its checkpoint. Resuming truncates to the last
//! complete record.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::checkpoint::{load_model, save_model};
use crate::error::{Error, Result};
use crate::model::MultiTaskModel;
use crate::scalar::Scalar;
use crate::selftrain::{IterationRecord, Observer, SelfTrainConfig, SelfTrainer};

pub const CONFIG_FILE: &str = "config.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const BEST_FILE: &str = "best";
pub const LOCK_FILE: &str = "run.lock";

pub fn checkpoint_name(iteration: usize) -> String {
    format!("iter-{iteration:04}.ckpt")
}

/// Exclusive writer lock, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    /// Takes the lock. A lock left by a process that no longer exists is
    /// taken over where process liveness can be checked (`/proc`).
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id()).map_err(|e| Error::io(&path, e))?;
                    return Ok(RunLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let owner = fs::read_to_string(&path).unwrap_or_default();
                    let pid = owner.trim().parse::<u32>().ok();
                    let stale = match pid {
                        Some(pid) if Path::new("/proc/self").exists() => !Path::new(&format!("/proc/{pid}")).exists(),
                        _ => false,
                    };
                    if !stale {
                        return Err(Error::RunDir(format!(
                            "{} is locked by process {}; remove {} if that process is gone",
                            dir.display(),
                            owner.trim(),
                            path.display()
                        )));
                    }
                    log::warn!("taking over stale lock of process {}", owner.trim());
                    fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        Err(Error::RunDir(format!("could not lock {}", dir.display())))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// A locked run directory.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    _lock: RunLock,
}

impl RunDir {
    /// Creates a fresh run. Fails if `root` already holds records.
    pub fn create<C: Serialize>(root: impl AsRef<Path>, snapshot: &C) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join(CHECKPOINT_DIR)).map_err(|e| Error::io(&root, e))?;
        let lock = RunLock::acquire(&root)?;
        if root.join(RECORDS_FILE).exists() {
            return Err(Error::RunDir(format!(
                "{} already contains a run; resume it or choose another directory",
                root.display()
            )));
        }
        let json = serde_json::to_vec_pretty(snapshot).map_err(|e| Error::RunDir(e.to_string()))?;
        write_atomic(&root.join(CONFIG_FILE), &json)?;
        File::create(root.join(RECORDS_FILE)).map_err(|e| Error::io(&root, e))?;
        Ok(RunDir { root, _lock: lock })
    }

    /// Opens an existing run for continuation.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        if !root.join(CONFIG_FILE).exists() {
            return Err(Error::RunDir(format!("{} has no {CONFIG_FILE}", root.display())));
        }
        let lock = RunLock::acquire(&root)?;
        Ok(RunDir { root, _lock: lock })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn snapshot<C: DeserializeOwned>(&self) -> Result<C> {
        read_snapshot(&self.root)
    }

    pub fn checkpoint_path(&self, iteration: usize) -> PathBuf {
        self.root.join(CHECKPOINT_DIR).join(checkpoint_name(iteration))
    }

    /// Complete records on disk. A torn final line is dropped from the file.
    pub fn load_records(&self) -> Result<Vec<IterationRecord>> {
        let path = self.root.join(RECORDS_FILE);
        let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        let mut kept = 0;
        for line in raw.split_inclusive('\n') {
            if !line.ends_with('\n') {
                break;
            }
            let r: IterationRecord = serde_json::from_str(line).map_err(|e| Error::RunDir(format!("{}: {e}", path.display())))?;
            kept += line.len();
            records.push(r);
        }
        if kept != raw.len() {
            log::warn!("dropping a partial record at the end of {}", path.display());
            write_atomic(&path, &raw.as_bytes()[..kept])?;
        }
        let mut complete = Vec::new();
        for r in records {
            if r.iteration != complete.len() + 1 || !self.checkpoint_path(r.iteration).exists() {
                return Err(Error::RunDir(format!("record for iteration {} is out of place", r.iteration)));
            }
            complete.push(r);
        }
        Ok(complete)
    }

    fn append_record(&self, record: &IterationRecord) -> Result<()> {
        let path = self.root.join(RECORDS_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        let line = serde_json::to_string(record).map_err(|e| Error::RunDir(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
        f.sync_data().map_err(|e| Error::io(&path, e))
    }

    /// Rebuilds a trainer from the last complete iteration, or `None` if no
    /// iteration finished.
    pub fn resume_trainer<T: Scalar>(&self, config: SelfTrainConfig) -> Result<Option<SelfTrainer<T>>> {
        let records = self.load_records()?;
        let Some(last) = records.last() else {
            return Ok(None);
        };
        let teacher = load_model::<T>(&self.checkpoint_path(last.iteration))?;
        let best_iteration = records
            .iter()
            .filter(|r| r.is_best)
            .map(|r| r.iteration)
            .last()
            .ok_or_else(|| Error::RunDir("no record is marked best".into()))?;
        let best = load_model::<T>(&self.checkpoint_path(best_iteration))?;
        write_atomic(&self.root.join(BEST_FILE), format!("{}\n", checkpoint_name(best_iteration)).as_bytes())?;
        SelfTrainer::resume(config, teacher, best, records).map(Some)
    }
}

impl<T: Scalar> Observer<T> for RunDir {
    fn iteration_done(&mut self, record: &IterationRecord, trainer: &SelfTrainer<T>) -> Result<()> {
        save_model(trainer.teacher(), &self.checkpoint_path(record.iteration))?;
        self.append_record(record)?;
        if record.is_best {
            write_atomic(&self.root.join(BEST_FILE), format!("{}\n", checkpoint_name(record.iteration)).as_bytes())?;
        }
        Ok(())
    }
}

pub fn read_snapshot<C: DeserializeOwned>(root: &Path) -> Result<C> {
    let path = root.join(CONFIG_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::RunDir(format!("{}: {e}", path.display())))
}

/// Records of a run without taking its lock.
pub fn read_records(root: &Path) -> Result<Vec<IterationRecord>> {
    let path = root.join(RECORDS_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::RunDir(format!("{}: {e}", path.display())))?);
    }
    Ok(out)
}

/// Path of the checkpoint named by the best marker.
pub fn best_checkpoint(root: &Path) -> Result<PathBuf> {
    let path = root.join(BEST_FILE);
    let name = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(root.join(CHECKPOINT_DIR).join(name.trim()))
}

pub fn load_best<T: Scalar>(root: &Path) -> Result<MultiTaskModel<T>> {
    load_model(&best_checkpoint(root)?)
}
