//! Logging to stderr and, once a run directory is known, to its `run.log`.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;

use env_logger::{Env, Target};

pub const RUN_LOG: &str = "run.log";

static RUN_LOG_FILE: Mutex<Option<File>> = Mutex::new(None);

struct Tee;

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stderr().write_all(buf)?;
        if let Some(f) = RUN_LOG_FILE.lock().unwrap_or_else(|p| p.into_inner()).as_mut() {
            f.write_all(buf)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        if let Some(f) = RUN_LOG_FILE.lock().unwrap_or_else(|p| p.into_inner()).as_mut() {
            f.flush()?;
        }
        io::stderr().flush()
    }
}

pub fn init() {
    env_logger::Builder::from_env(Env::default().default_filter_or("info"))
        .target(Target::Pipe(Box::new(Tee)))
        .init();
}

/// Appends all further log lines to `<dir>/run.log`.
pub fn attach_run_log(dir: &Path) -> io::Result<()> {
    let f = OpenOptions::new().create(true).append(true).open(dir.join(RUN_LOG))?;
    *RUN_LOG_FILE.lock().unwrap_or_else(|p| p.into_inner()) = Some(f);
    Ok(())
}
