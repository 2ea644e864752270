//! Binary checkpoints.
//!
//! Layout: magic `ASA1`, format version (`u32`), config hash (`u64`), the
//! state body, then a `u64` taken from the SHA-256 of everything before it.
//! All integers are little-endian. Parameters are stored as `f32`, which is
//! exact because the global model is kept at `f32` precision.

use std::io::Cursor;
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{DeviceState, SimState};
use crate::models::{Direction, ParamVector, Rung};
use crate::training::MonitorState;

pub const MAGIC: &[u8; 4] = b"ASA1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint was written for config {found:016x}, current config is {expected:016x}")]
    ConfigMismatch { expected: u64, found: u64 },

    #[error("checkpoint checksum mismatch")]
    Checksum,

    #[error("checkpoint is truncated or malformed: {0}")]
    Malformed(String),

    #[error("checkpoint i/o error: {0}")]
    Io(#[from] std::io::Error),
}

type CResult<T> = std::result::Result<T, CheckpointError>;

fn checksum(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn direction_tag(d: Direction) -> u8 {
    match d {
        Direction::Up => 0,
        Direction::Down => 1,
        Direction::Hold => 2,
    }
}

fn direction_from(tag: u8) -> CResult<Direction> {
    match tag {
        0 => Ok(Direction::Up),
        1 => Ok(Direction::Down),
        2 => Ok(Direction::Hold),
        t => Err(CheckpointError::Malformed(format!("direction tag {t}"))),
    }
}

fn rung_from(tag: u8) -> CResult<Rung> {
    Rung::from_index(tag as usize).map_err(|e| CheckpointError::Malformed(e.to_string()))
}

pub fn encode(state: &SimState, config_hash: u64) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.write_u32::<LE>(VERSION).unwrap();
    b.write_u64::<LE>(config_hash).unwrap();
    b.write_u64::<LE>(state.round).unwrap();
    b.write_u8(state.stopped as u8).unwrap();
    for a in state.rung_accuracy {
        b.write_f64::<LE>(a).unwrap();
    }
    b.write_u64::<LE>(state.loss_history.len() as u64).unwrap();
    for &l in &state.loss_history {
        b.write_f64::<LE>(l).unwrap();
    }
    b.write_u64::<LE>(state.devices.len() as u64).unwrap();
    for d in &state.devices {
        b.write_u8(d.rung as u8).unwrap();
        b.write_u32::<LE>(d.monitor.stable_epochs).unwrap();
        b.write_u8(direction_tag(d.monitor.last_direction)).unwrap();
    }
    b.write_u64::<LE>(state.labels.len() as u64).unwrap();
    for &l in &state.labels {
        b.write_u32::<LE>(l as u32).unwrap();
    }
    b.write_u64::<LE>(state.cluster_rungs.len() as u64).unwrap();
    for &r in &state.cluster_rungs {
        b.write_u8(r as u8).unwrap();
    }
    b.extend_from_slice(&state.global.to_bytes());
    let sum = checksum(&b);
    b.write_u64::<LE>(sum).unwrap();
    b
}

fn read_len(c: &mut Cursor<&[u8]>, remaining_min_each: usize) -> CResult<usize> {
    let n = c.read_u64::<LE>()? as usize;
    let left = c.get_ref().len() - c.position() as usize;
    if n.saturating_mul(remaining_min_each) > left {
        return Err(CheckpointError::Malformed(format!("length {n} exceeds file")));
    }
    Ok(n)
}

/// Decodes a checkpoint, verifying magic, version, checksum and config hash.
pub fn decode(bytes: &[u8], expected_hash: u64) -> CResult<SimState> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 24 {
        return Err(CheckpointError::Malformed("header truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if checksum(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
        return Err(CheckpointError::Checksum);
    }
    let mut c = Cursor::new(body);
    c.set_position(4);
    let version = c.read_u32::<LE>()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let found = c.read_u64::<LE>()?;
    if found != expected_hash {
        return Err(CheckpointError::ConfigMismatch {
            expected: expected_hash,
            found,
        });
    }
    let round = c.read_u64::<LE>()?;
    let stopped = c.read_u8()? != 0;
    let mut rung_accuracy = [0.0; 3];
    for a in &mut rung_accuracy {
        *a = c.read_f64::<LE>()?;
    }
    let n = read_len(&mut c, 8)?;
    let loss_history = (0..n)
        .map(|_| c.read_f64::<LE>())
        .collect::<std::io::Result<Vec<_>>>()?;
    let n = read_len(&mut c, 6)?;
    let mut devices = Vec::with_capacity(n);
    for _ in 0..n {
        let rung = rung_from(c.read_u8()?)?;
        let stable_epochs = c.read_u32::<LE>()?;
        let last_direction = direction_from(c.read_u8()?)?;
        devices.push(DeviceState {
            rung,
            monitor: MonitorState {
                stable_epochs,
                last_direction,
            },
        });
    }
    let n = read_len(&mut c, 4)?;
    let labels = (0..n)
        .map(|_| c.read_u32::<LE>().map(|v| v as usize))
        .collect::<std::io::Result<Vec<_>>>()?;
    let n = read_len(&mut c, 1)?;
    let cluster_rungs = (0..n).map(|_| rung_from(c.read_u8()?)).collect::<CResult<Vec<_>>>()?;
    let pos = c.position() as usize;
    let (global, used) =
        ParamVector::from_bytes(&body[pos..]).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    if pos + used != body.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    Ok(SimState {
        round,
        global,
        loss_history,
        devices,
        labels,
        cluster_rungs,
        rung_accuracy,
        stopped,
    })
}

/// Writes via a temporary file and rename so a crash never leaves a partial
/// checkpoint behind.
pub fn save(path: &Path, state: &SimState, config_hash: u64) -> CResult<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(state, config_hash))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn restore(path: &Path, expected_hash: u64) -> CResult<SimState> {
    decode(&std::fs::read(path)?, expected_hash)
}
