//! Binary chunk codec: one file per instance holding every condition trace.
//!
//! ```text
//! "RIDE" | u32 version | u64 xxh3(payload) | payload
//! ```
//!
//! All integers and floats are little-endian. The byte layout of the payload
//! is described in `docs/trace-format.md`.

use ride_core::trace::{
    AttentionView, ConditionTrace, GenerationRecord, HiddenSlab, InstanceTraces, OptionScores,
    SparseDistribution,
};
use ride_core::ConditionId;
use xxhash_rust::xxh3::xxh3_64;

pub const MAGIC: &[u8; 4] = b"RIDE";
pub const CHUNK_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

const HAS_ENTROPIES: u8 = 0b01;
const HAS_DISTRIBUTIONS: u8 = 0b10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("not a chunk file (bad magic)")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt chunk: checksum mismatch")]
    ChecksumMismatch,
    #[error("corrupt chunk: truncated at byte {0}")]
    Truncated(usize),
    #[error("corrupt chunk: {0}")]
    Malformed(String),
}

pub fn checksum(payload: &[u8]) -> u64 {
    xxh3_64(payload)
}

pub fn encode_chunk(instance: &InstanceTraces) -> Vec<u8> {
    let mut payload = Vec::new();
    put_str(&mut payload, &instance.instance_id);
    put_u32(&mut payload, instance.conditions.len() as u32);
    let mut section = Vec::new();
    for trace in &instance.conditions {
        section.clear();
        encode_condition(&mut section, trace);
        put_u64(&mut payload, section.len() as u64);
        payload.extend_from_slice(&section);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, CHUNK_VERSION);
    put_u64(&mut out, checksum(&payload));
    out.extend_from_slice(&payload);
    out
}

pub fn decode_chunk(bytes: &[u8]) -> Result<InstanceTraces, FormatError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated(bytes.len()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHUNK_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let sum = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let payload = &bytes[HEADER_LEN..];
    if checksum(payload) != sum {
        return Err(FormatError::ChecksumMismatch);
    }
    let mut r = Reader::new(payload, HEADER_LEN);
    let instance_id = r.string()?;
    let count = r.u32()? as usize;
    let mut conditions = Vec::with_capacity(count.min(8));
    for _ in 0..count {
        let len = r.u64()? as usize;
        let start = r.pos;
        let trace = decode_condition(&mut r)?;
        if r.pos - start != len {
            return Err(FormatError::Malformed(format!(
                "section length {len} but {} bytes decoded",
                r.pos - start
            )));
        }
        if let Some(prev) = conditions.last().map(|c: &ConditionTrace| c.condition) {
            if prev >= trace.condition {
                return Err(FormatError::Malformed(
                    "sections out of canonical condition order".into(),
                ));
            }
        }
        conditions.push(trace);
    }
    if !r.is_empty() {
        return Err(FormatError::Malformed("trailing bytes".into()));
    }
    Ok(InstanceTraces {
        instance_id,
        conditions,
    })
}

fn encode_condition(out: &mut Vec<u8>, t: &ConditionTrace) {
    out.push(t.condition.code());
    put_u32(out, t.prompt_token_count);

    let h = &t.hidden;
    put_u32(out, h.layers.len() as u32);
    put_u32(out, h.positions.len() as u32);
    put_u32(out, h.dim as u32);
    put_u32s(out, &h.layers);
    put_u32s(out, &h.positions);
    put_f32s(out, &h.data);

    for view in [&t.attention_prompt_last, &t.attention_first_gen] {
        put_u32(out, view.heads as u32);
        put_u32(out, view.positions as u32);
        put_f32s(out, &view.weights);
    }

    put_u32(out, t.visible_mask.len() as u32);
    out.extend(t.visible_mask.iter().map(|&v| v as u8));
    put_u32(out, t.keyword_positions.len() as u32);
    put_u32s(out, &t.keyword_positions);

    put_u32(out, t.generations.len() as u32);
    for g in &t.generations {
        encode_generation(out, g);
    }

    match &t.option_scores {
        None => out.push(0),
        Some(o) => {
            out.push(1);
            put_str(out, &o.gold);
            put_u32(out, o.options.len() as u32);
            for (name, probs) in &o.options {
                put_str(out, name);
                put_u32(out, probs.len() as u32);
                put_f32s(out, probs);
            }
        }
    }
}

fn encode_generation(out: &mut Vec<u8>, g: &GenerationRecord) {
    put_str(out, &g.text);
    put_u32(out, g.token_count);
    put_u64(out, g.seed);
    let mut flags = 0u8;
    if g.token_entropies.is_some() {
        flags |= HAS_ENTROPIES;
    }
    if g.token_distributions.is_some() {
        flags |= HAS_DISTRIBUTIONS;
    }
    out.push(flags);
    if let Some(h) = &g.token_entropies {
        put_u32(out, h.len() as u32);
        put_f32s(out, h);
    }
    if let Some(dists) = &g.token_distributions {
        put_u32(out, dists.len() as u32);
        for d in dists {
            put_u32(out, d.top.len() as u32);
            for &(tok, p) in &d.top {
                put_u32(out, tok);
                put_f32(out, p);
            }
            put_f32(out, d.tail_mass);
        }
    }
    put_u32(out, g.embedding.len() as u32);
    put_f32s(out, &g.embedding);
}

fn decode_condition(r: &mut Reader<'_>) -> Result<ConditionTrace, FormatError> {
    let code = r.u8()?;
    let condition = ConditionId::from_code(code)
        .ok_or_else(|| FormatError::Malformed(format!("unknown condition code {code}")))?;
    let prompt_token_count = r.u32()?;

    let n_layers = r.u32()? as usize;
    let n_positions = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let layers = r.u32s(n_layers)?;
    let positions = r.u32s(n_positions)?;
    let n = n_layers
        .checked_mul(n_positions)
        .and_then(|x| x.checked_mul(dim))
        .ok_or_else(|| FormatError::Malformed("hidden slab too large".into()))?;
    let data = r.f32s(n)?;
    let hidden = HiddenSlab {
        layers,
        positions,
        dim,
        data,
    };

    let mut views = Vec::with_capacity(2);
    for _ in 0..2 {
        let heads = r.u32()? as usize;
        let positions = r.u32()? as usize;
        let n = heads
            .checked_mul(positions)
            .ok_or_else(|| FormatError::Malformed("attention view too large".into()))?;
        views.push(AttentionView {
            heads,
            positions,
            weights: r.f32s(n)?,
        });
    }
    let attention_first_gen = views.pop().unwrap();
    let attention_prompt_last = views.pop().unwrap();

    let n = r.u32()? as usize;
    let visible_mask = r
        .bytes(n)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(FormatError::Malformed(format!("visible flag {other}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = r.u32()? as usize;
    let keyword_positions = r.u32s(n)?;

    let n = r.u32()? as usize;
    let mut generations = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        generations.push(decode_generation(r)?);
    }

    let option_scores = match r.u8()? {
        0 => None,
        1 => {
            let gold = r.string()?;
            let n = r.u32()? as usize;
            let mut options = Vec::with_capacity(n.min(64));
            for _ in 0..n {
                let name = r.string()?;
                let len = r.u32()? as usize;
                options.push((name, r.f32s(len)?));
            }
            Some(OptionScores { options, gold })
        }
        other => return Err(FormatError::Malformed(format!("option flag {other}"))),
    };

    Ok(ConditionTrace {
        condition,
        prompt_token_count,
        hidden,
        attention_prompt_last,
        attention_first_gen,
        visible_mask,
        keyword_positions,
        generations,
        option_scores,
    })
}

fn decode_generation(r: &mut Reader<'_>) -> Result<GenerationRecord, FormatError> {
    let text = r.string()?;
    let token_count = r.u32()?;
    let seed = r.u64()?;
    let flags = r.u8()?;
    if flags & !(HAS_ENTROPIES | HAS_DISTRIBUTIONS) != 0 {
        return Err(FormatError::Malformed(format!(
            "generation flags {flags:#x}"
        )));
    }
    let token_entropies = if flags & HAS_ENTROPIES != 0 {
        let n = r.u32()? as usize;
        Some(r.f32s(n)?)
    } else {
        None
    };
    let token_distributions = if flags & HAS_DISTRIBUTIONS != 0 {
        let n = r.u32()? as usize;
        let mut dists = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let m = r.u32()? as usize;
            let mut top = Vec::with_capacity(m.min(4096));
            for _ in 0..m {
                top.push((r.u32()?, r.f32()?));
            }
            dists.push(SparseDistribution {
                top,
                tail_mass: r.f32()?,
            });
        }
        Some(dists)
    } else {
        None
    };
    let n = r.u32()? as usize;
    let embedding = r.f32s(n)?;
    Ok(GenerationRecord {
        text,
        token_count,
        token_entropies,
        token_distributions,
        embedding,
        seed,
    })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32s(out: &mut Vec<u8>, vs: &[u32]) {
    out.reserve(vs.len() * 4);
    for &v in vs {
        put_u32(out, v);
    }
}

fn put_f32s(out: &mut Vec<u8>, vs: &[f32]) {
    out.reserve(vs.len() * 4);
    for &v in vs {
        put_f32(out, v);
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    /// Offset of `buf` in the file, for error positions.
    base: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], base: usize) -> Self {
        Self { buf, pos: 0, base }
    }

    fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(FormatError::Truncated(self.base + self.pos))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>, FormatError> {
        let raw = self.bytes(n.checked_mul(4).ok_or(FormatError::Truncated(self.base))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let raw = self.bytes(n.checked_mul(4).ok_or(FormatError::Truncated(self.base))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> Result<String, FormatError> {
        let n = self.u32()? as usize;
        let raw = self.bytes(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| FormatError::Malformed("invalid UTF-8".into()))
    }
}
