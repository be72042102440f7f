//! `UNC1` network checkpoints.
//!
//! Layout, all little-endian: `b"UNC1"`, `u32` version (1), `u32` depth,
//! `u32` base channels, `u64` parameter count, then the parameters as `f32`
//! in canonical layer order (each layer's weights, then its biases).
//!
//! Checkpoints written during training append an optimizer trailer so a run
//! can resume: `b"TRS1"`, `u64` completed epochs, `u64` completed steps,
//! `u32` loss-history length and that many `f64` epoch losses, then the
//! momentum buffer as `f32` in parameter order. Readers that only need the
//! network stop after the parameters.

use std::path::Path;

use voxmark_core::train::TrainState;
use voxmark_core::unet::{NetArch, NetParams};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UNC1";
pub const VERSION: u32 = 1;
const TRAILER_MAGIC: &[u8; 4] = b"TRS1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: NetArch,
    pub params: NetParams<f32>,
    /// Present when the file can resume training.
    pub progress: Option<Progress>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    pub epoch: usize,
    pub step: u64,
    pub loss_history: Vec<f64>,
    pub velocity: NetParams<f32>,
}

impl Checkpoint {
    pub fn from_state(arch: NetArch, state: &TrainState) -> Self {
        Self {
            arch,
            params: state.params.clone(),
            progress: Some(Progress {
                epoch: state.epoch,
                step: state.step,
                loss_history: state.loss_history.clone(),
                velocity: state.velocity.clone(),
            }),
        }
    }

    /// Training state to resume from; a params-only file restarts momentum.
    pub fn into_state(self) -> TrainState {
        let mut state = TrainState::new(self.params);
        if let Some(p) = self.progress {
            state.epoch = p.epoch;
            state.step = p.step;
            state.loss_history = p.loss_history;
            state.velocity = p.velocity;
        }
        state
    }
}

fn put_floats(out: &mut Vec<u8>, p: &NetParams<f32>) {
    for t in p.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let n = ck.params.len();
    let mut out = Vec::with_capacity(24 + 8 * n + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ck.arch.depth as u32).to_le_bytes());
    out.extend_from_slice(&(ck.arch.base_channels as u32).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    put_floats(&mut out, &ck.params);
    if let Some(p) = &ck.progress {
        out.extend_from_slice(TRAILER_MAGIC);
        out.extend_from_slice(&(p.epoch as u64).to_le_bytes());
        out.extend_from_slice(&p.step.to_le_bytes());
        out.extend_from_slice(&(p.loss_history.len() as u32).to_le_bytes());
        for l in &p.loss_history {
            out.extend_from_slice(&l.to_le_bytes());
        }
        put_floats(&mut out, &p.velocity);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n.checked_mul(4).ok_or_else(|| Error::format(self.path, "parameter count overflows"))?;
        Ok(self.take(len)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

/// Parses a checkpoint; when `expect` is given the stored architecture must match it.
pub fn decode(bytes: &[u8], path: &Path, expect: Option<&NetArch>) -> Result<Checkpoint> {
    let mut r = Reader { bytes, at: 0, path };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::format(path, "bad magic, not a UNC1 checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let arch = NetArch { depth: r.u32()? as usize, base_channels: r.u32()? as usize };
    arch.validate().map_err(|e| Error::format(path, e.to_string()))?;
    if let Some(want) = expect {
        if *want != arch {
            return Err(Error::format(
                path,
                format!(
                    "architecture mismatch: file has depth {} base {}, expected depth {} base {}",
                    arch.depth, arch.base_channels, want.depth, want.base_channels
                ),
            ));
        }
    }
    let count = r.u64()?;
    if count != arch.param_count() as u64 {
        return Err(Error::format(
            path,
            format!("parameter count {count} does not match architecture ({})", arch.param_count()),
        ));
    }
    let n = count as usize;
    let params = NetParams::from_flat(&arch, &r.floats(n)?).map_err(|e| Error::format(path, e.to_string()))?;
    let mut progress = None;
    if r.at < bytes.len() {
        if r.take(4)? != TRAILER_MAGIC.as_slice() {
            return Err(Error::format(path, "unrecognized data after parameters"));
        }
        let epoch = r.u64()? as usize;
        let step = r.u64()?;
        let nloss = r.u32()? as usize;
        let mut loss_history = Vec::with_capacity(nloss.min(1 << 20));
        for _ in 0..nloss {
            loss_history.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
        }
        let velocity = NetParams::from_flat(&arch, &r.floats(n)?).map_err(|e| Error::format(path, e.to_string()))?;
        if r.at != bytes.len() {
            return Err(Error::format(path, "trailing bytes after optimizer state"));
        }
        progress = Some(Progress { epoch, step, loss_history, velocity });
    }
    Ok(Checkpoint { arch, params, progress })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ck)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, expect: Option<&NetArch>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path, expect)
}
