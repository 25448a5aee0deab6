//! Inference timing: wall clock, process CPU time and utilization.

use std::fs::{self, OpenOptions};
use std::hint::black_box;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::encoder::ByteSample;
use crate::network::{Network, NetworkError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("repetitions must be at least 1")]
    ZeroRepetitions,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("another benchmark holds the lock {path} ({holder}); remove it if that run is gone")]
    Locked { path: PathBuf, holder: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    /// Median over repetitions.
    pub wall_test_seconds: f64,
    pub wall_min_seconds: f64,
    pub wall_max_seconds: f64,
    pub cpu_user_seconds: f64,
    pub cpu_system_seconds: f64,
    /// `(user + system) / wall` of the median repetition.
    pub utilization: f64,
    pub sample_count: usize,
    pub samples_per_second: f64,
    pub repetitions: usize,
    /// Accuracy of the timed pass.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct CpuTimes {
    user: f64,
    system: f64,
}

fn cpu_times() -> CpuTimes {
    let mut usage = std::mem::MaybeUninit::<libc::rusage>::zeroed();
    // SAFETY: getrusage fills the struct; RUSAGE_SELF is always valid.
    let rc = unsafe { libc::getrusage(libc::RUSAGE_SELF, usage.as_mut_ptr()) };
    if rc != 0 {
        return CpuTimes::default();
    }
    // SAFETY: initialized by the successful call above.
    let u = unsafe { usage.assume_init() };
    let secs = |t: libc::timeval| t.tv_sec as f64 + t.tv_usec as f64 * 1e-6;
    CpuTimes {
        user: secs(u.ru_utime),
        system: secs(u.ru_stime),
    }
}

struct Run {
    wall: f64,
    user: f64,
    system: f64,
}

/// Times `repetitions` sequential eval passes over `samples`.
pub fn bench_inference(
    net: &Network,
    samples: &[&ByteSample],
    repetitions: usize,
) -> Result<BenchReport, BenchError> {
    if repetitions == 0 {
        return Err(BenchError::ZeroRepetitions);
    }
    if samples.is_empty() {
        return Err(BenchError::EmptyTestSet);
    }
    let mut runs = Vec::with_capacity(repetitions);
    let mut correct = 0;
    for _ in 0..repetitions {
        let cpu0 = cpu_times();
        let t0 = Instant::now();
        correct = 0;
        for s in samples {
            let class = net.predict_class(black_box(s))?;
            correct += usize::from(class == s.label);
        }
        let wall = t0.elapsed().as_secs_f64();
        let cpu1 = cpu_times();
        runs.push(Run {
            wall,
            user: (cpu1.user - cpu0.user).max(0.0),
            system: (cpu1.system - cpu0.system).max(0.0),
        });
    }
    runs.sort_by(|a, b| a.wall.total_cmp(&b.wall));
    let median = &runs[runs.len() / 2];
    let wall = median.wall;
    Ok(BenchReport {
        wall_test_seconds: wall,
        wall_min_seconds: runs[0].wall,
        wall_max_seconds: runs[runs.len() - 1].wall,
        cpu_user_seconds: median.user,
        cpu_system_seconds: median.system,
        utilization: if wall > 0.0 {
            (median.user + median.system) / wall
        } else {
            0.0
        },
        sample_count: samples.len(),
        samples_per_second: if wall > 0.0 {
            samples.len() as f64 / wall
        } else {
            0.0
        },
        repetitions,
        accuracy: correct as f64 / samples.len() as f64,
    })
}

/// Exclusive benchmark lock, released on drop.
#[derive(Debug)]
pub struct BenchLock {
    path: PathBuf,
}

impl BenchLock {
    pub fn acquire(path: impl AsRef<Path>) -> Result<BenchLock, BenchError> {
        let path = path.as_ref().to_path_buf();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "pid {}", std::process::id())?;
                Ok(BenchLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(&path)
                    .map(|s| s.trim().to_string())
                    .unwrap_or_else(|_| "unknown holder".into());
                Err(BenchError::Locked { path, holder })
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for BenchLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
