use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::collect::RawEpisode;
use super::encode::LatentTransition;
use crate::error::{Error, Result};
use crate::moe_model::MoeLm;
use crate::toylang::Utterance;

pub const DATA_FORMAT: &str = "moedm-data-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataHeader {
    pub format: String,
    pub d: usize,
    pub m: usize,
    pub phi_hash: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentDataset {
    pub header: DataHeader,
    pub transitions: Vec<LatentTransition>,
}

#[derive(Serialize, Deserialize)]
struct Line {
    z: String,
    z_a: String,
    r: f64,
    z_next: String,
    terminal: bool,
    turn: usize,
    action: Utterance,
    reply: Utterance,
    expert: usize,
    attribution: Option<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    candidates: Vec<String>,
}

fn pack(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn unpack(s: &str, d: usize) -> Result<Vec<f64>> {
    let bytes = B64.decode(s).map_err(|e| Error::Format(format!("bad base64 latent: {e}")))?;
    if bytes.len() != 8 * d {
        return Err(Error::Format(format!("latent has {} bytes, expected {}", bytes.len(), 8 * d)));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// SHA-256 of the encoder's serialised parameters.
pub fn encoder_hash(model: &MoeLm) -> String {
    let json = serde_json::to_vec(&model.encoder.to_record()).expect("encoder serialises");
    hex::encode(Sha256::digest(&json))
}

pub fn write_dataset(path: &Path, ds: &LatentDataset) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &ds.header)?;
    w.write_all(b"\n").map_err(io)?;
    for t in &ds.transitions {
        let line = Line {
            z: pack(&t.z),
            z_a: pack(&t.z_a),
            r: t.r,
            z_next: pack(&t.z_next),
            terminal: t.terminal,
            turn: t.turn,
            action: t.action.clone(),
            reply: t.reply.clone(),
            expert: t.expert,
            attribution: t.attribution,
            candidates: t.candidates.iter().map(|c| pack(c)).collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dataset(path: &Path) -> Result<LatentDataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format("empty dataset file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let header: DataHeader = serde_json::from_str(&first)?;
    if header.format != DATA_FORMAT {
        return Err(Error::Format(format!("expected {DATA_FORMAT}, found {}", header.format)));
    }
    let d = header.d;
    let mut transitions = Vec::with_capacity(header.count);
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let l: Line = serde_json::from_str(&line)?;
        let candidates = l.candidates.iter().map(|c| unpack(c, d)).collect::<Result<Vec<_>>>()?;
        if !candidates.is_empty() && candidates.len() != header.m {
            return Err(Error::Format(format!("{} candidates, expected {}", candidates.len(), header.m)));
        }
        transitions.push(LatentTransition {
            z: unpack(&l.z, d)?,
            z_a: unpack(&l.z_a, d)?,
            r: l.r,
            z_next: unpack(&l.z_next, d)?,
            terminal: l.terminal,
            turn: l.turn,
            action: l.action,
            reply: l.reply,
            expert: l.expert,
            attribution: l.attribution,
            candidates,
        });
    }
    if transitions.len() != header.count {
        return Err(Error::Format(format!(
            "header promises {} transitions, file has {}",
            header.count,
            transitions.len()
        )));
    }
    Ok(LatentDataset { header, transitions })
}

/// Content hash over header and every transition (latents bitwise).
pub fn dataset_hash(ds: &LatentDataset) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&ds.header).expect("header serialises"));
    for t in &ds.transitions {
        for v in [&t.z, &t.z_a, &t.z_next].into_iter().chain(t.candidates.iter()) {
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        }
        h.update(t.r.to_le_bytes());
        h.update([t.terminal as u8, t.attribution.map_or(255, |a| a)]);
        h.update((t.turn as u64).to_le_bytes());
        h.update((t.expert as u64).to_le_bytes());
        for u in [&t.action, &t.reply] {
            for tok in &u.tokens {
                h.update(tok.to_le_bytes());
            }
            h.update([0xff, 0xff]);
        }
    }
    hex::encode(h.finalize())
}

pub fn write_episodes(path: &Path, eps: &[RawEpisode]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for e in eps {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_episodes(path: &Path) -> Result<Vec<RawEpisode>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
