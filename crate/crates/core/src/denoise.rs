//! Denoiser stage: built-in filters and an external-process adapter.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{gaussian_blur, median_blur};
use crate::error::{AdapterError, Error, Result};
use crate::image::RasterImage;

/// Directory searched for adapter programs given by bare name.
pub const ADAPTER_PATH_ENV: &str = "EMSC_ADAPTER_PATH";

/// Program plus arguments; stdin receives a PGM, stdout must return one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandSpec {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    30.0
}

impl CommandSpec {
    pub fn new(program: impl Into<String>, args: &[&str]) -> Self {
        CommandSpec {
            program: program.into(),
            args: args.iter().map(|s| s.to_string()).collect(),
            timeout_s: default_timeout(),
        }
    }

    fn resolve(&self) -> std::path::PathBuf {
        let p = std::path::Path::new(&self.program);
        if p.components().count() == 1 {
            if let Some(dir) = std::env::var_os(ADAPTER_PATH_ENV) {
                let candidate = std::path::Path::new(&dir).join(p);
                if candidate.is_file() {
                    return candidate;
                }
            }
        }
        p.to_path_buf()
    }

    fn display(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DenoiseMethod {
    Raw,
    Median { k: usize },
    Gaussian { sigma: f64 },
    External(CommandSpec),
}

impl DenoiseMethod {
    pub fn validate(&self) -> Result<()> {
        match self {
            DenoiseMethod::Raw => Ok(()),
            DenoiseMethod::Median { k } if *k == 0 || k % 2 == 0 => {
                Err(Error::invalid(format!("median window must be odd, got {k}")))
            }
            DenoiseMethod::Gaussian { sigma } if !(sigma.is_finite() && *sigma > 0.0) => {
                Err(Error::invalid(format!("gaussian sigma must be > 0, got {sigma}")))
            }
            DenoiseMethod::External(cmd) if cmd.program.is_empty() => Err(Error::invalid("empty adapter command")),
            DenoiseMethod::External(cmd) if !(cmd.timeout_s.is_finite() && cmd.timeout_s > 0.0) => {
                Err(Error::invalid("adapter timeout must be > 0"))
            }
            _ => Ok(()),
        }
    }

    /// Short name for report rows.
    pub fn name(&self) -> String {
        match self {
            DenoiseMethod::Raw => "raw".into(),
            DenoiseMethod::Median { k } => format!("median{k}"),
            DenoiseMethod::Gaussian { sigma } => format!("gaussian{sigma}"),
            DenoiseMethod::External(cmd) => format!("external:{}", cmd.program),
        }
    }
}

pub fn denoise(img: &RasterImage, method: &DenoiseMethod) -> Result<RasterImage> {
    method.validate()?;
    match method {
        DenoiseMethod::Raw => Ok(img.clone()),
        DenoiseMethod::Median { k } => median_blur(img, *k),
        DenoiseMethod::Gaussian { sigma } => gaussian_blur(img, *sigma),
        DenoiseMethod::External(cmd) => external_denoise(img, cmd, cmd.timeout_s),
    }
}

/// Pipes `img` through an adapter process and reads back an image of the same size.
pub fn external_denoise(img: &RasterImage, adapter: &CommandSpec, timeout_s: f64) -> Result<RasterImage> {
    if !(timeout_s.is_finite() && timeout_s > 0.0) {
        return Err(Error::invalid("adapter timeout must be > 0"));
    }
    let mut child = Command::new(adapter.resolve())
        .args(&adapter.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| AdapterError::Spawn {
            command: adapter.display(),
            source,
        })?;

    let input = img.to_pgm();
    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = thread::spawn(move || {
        // a child that exits early closes the pipe; that is reported via its status
        let _ = stdin.write_all(&input);
    });
    let mut stdout = child.stdout.take().expect("piped stdout");
    let reader = thread::spawn(move || {
        let mut buf = Vec::new();
        stdout.read_to_end(&mut buf).map(|_| buf)
    });
    let mut stderr = child.stderr.take().expect("piped stderr");
    let err_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        buf
    });

    let deadline = Instant::now() + Duration::from_secs_f64(timeout_s);
    let status = loop {
        match child.try_wait().map_err(AdapterError::Io)? {
            Some(status) => break status,
            None if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(AdapterError::Timeout(timeout_s).into());
            }
            None => thread::sleep(Duration::from_millis(5)),
        }
    };
    let _ = writer.join();
    let output = reader
        .join()
        .expect("reader thread")
        .map_err(AdapterError::Io)?;
    let stderr = err_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(AdapterError::NonZeroExit {
            status: status.to_string(),
            stderr: String::from_utf8_lossy(&stderr).trim().to_string(),
        }
        .into());
    }
    let out = RasterImage::from_pgm(&output).map_err(|e| AdapterError::BadOutput(e.to_string()))?;
    if out.dimensions() != img.dimensions() {
        return Err(AdapterError::BadOutput(format!(
            "expected {}x{}, got {}x{}",
            img.width(),
            img.height(),
            out.width(),
            out.height()
        ))
        .into());
    }
    Ok(out)
}
