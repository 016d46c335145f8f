use serde::{Deserialize, Serialize};

use super::PrepError;

pub const DEFAULT_MAX_LEN: usize = 8192;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub sample_id: String,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub token_ids: Vec<u32>,
    pub segments: Vec<Segment>,
    pub position_ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackConfig {
    pub max_len: usize,
    pub delimiter_id: u32,
}

impl Default for PackConfig {
    fn default() -> Self {
        Self {
            max_len: DEFAULT_MAX_LEN,
            delimiter_id: super::tokenizer::DEFAULT_DELIMITER_ID,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSample {
    pub sample_id: String,
    pub tokens: Vec<u32>,
}

/// Next-fit in input order. Segments are separated by one delimiter token,
/// which takes the position id following its segment's last token.
pub fn pack(
    samples: &[TokenizedSample],
    cfg: PackConfig,
) -> Result<Vec<PackedSequence>, PrepError> {
    for s in samples {
        if s.tokens.is_empty() {
            return Err(PrepError::EmptySample(s.sample_id.clone()));
        }
        if s.tokens.len() > cfg.max_len {
            return Err(PrepError::OversizedSample {
                sample_id: s.sample_id.clone(),
                tokens: s.tokens.len(),
                max_len: cfg.max_len,
            });
        }
    }
    let mut out = Vec::new();
    let mut cur = PackedSequence {
        token_ids: Vec::new(),
        segments: Vec::new(),
        position_ids: Vec::new(),
    };
    for s in samples {
        if !cur.token_ids.is_empty() && cur.token_ids.len() + 1 + s.tokens.len() > cfg.max_len {
            out.push(std::mem::replace(
                &mut cur,
                PackedSequence {
                    token_ids: Vec::new(),
                    segments: Vec::new(),
                    position_ids: Vec::new(),
                },
            ));
        }
        if !cur.token_ids.is_empty() {
            let next_pos = cur.position_ids.last().map_or(0, |p| p + 1);
            cur.token_ids.push(cfg.delimiter_id);
            cur.position_ids.push(next_pos);
        }
        let start = cur.token_ids.len();
        cur.token_ids.extend_from_slice(&s.tokens);
        cur.position_ids.extend(0..s.tokens.len() as u32);
        cur.segments.push(Segment {
            sample_id: s.sample_id.clone(),
            start,
            end: cur.token_ids.len(),
        });
    }
    if !cur.token_ids.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

/// Inverse of `pack`, checking the segment table against the token stream.
pub fn unpack(seq: &PackedSequence, delimiter_id: u32) -> Result<Vec<TokenizedSample>, PrepError> {
    let corrupt = |m: String| Err(PrepError::CorruptSegments(m));
    if seq.position_ids.len() != seq.token_ids.len() {
        return corrupt(format!(
            "{} position ids for {} tokens",
            seq.position_ids.len(),
            seq.token_ids.len()
        ));
    }
    let mut expected_start = 0;
    let mut out = Vec::new();
    for (i, seg) in seq.segments.iter().enumerate() {
        if seg.start != expected_start {
            return corrupt(format!(
                "segment {i} starts at {}, expected {expected_start}",
                seg.start
            ));
        }
        if seg.end <= seg.start || seg.end > seq.token_ids.len() {
            return corrupt(format!(
                "segment {i} has invalid span {}..{}",
                seg.start, seg.end
            ));
        }
        let last = i + 1 == seq.segments.len();
        if last && seg.end != seq.token_ids.len() {
            return corrupt(format!(
                "last segment ends at {}, stream has {} tokens",
                seg.end,
                seq.token_ids.len()
            ));
        }
        if !last && seq.token_ids.get(seg.end) != Some(&delimiter_id) {
            return corrupt(format!("segment {i} is not followed by a delimiter"));
        }
        let run_end = if last { seg.end } else { seg.end + 1 };
        if !seq.position_ids[seg.start..run_end]
            .iter()
            .enumerate()
            .all(|(k, &p)| p as usize == k)
        {
            return corrupt(format!("segment {i} position ids do not restart at 0"));
        }
        out.push(TokenizedSample {
            sample_id: seg.sample_id.clone(),
            tokens: seq.token_ids[seg.start..seg.end].to_vec(),
        });
        expected_start = seg.end + 1;
    }
    if seq.segments.is_empty() && !seq.token_ids.is_empty() {
        return corrupt("tokens without segments".into());
    }
    Ok(out)
}

pub fn unpack_all(
    seqs: &[PackedSequence],
    delimiter_id: u32,
) -> Result<Vec<TokenizedSample>, PrepError> {
    let mut out = Vec::new();
    for s in seqs {
        out.extend(unpack(s, delimiter_id)?);
    }
    Ok(out)
}

/// Sample tokens over total sequence capacity.
pub fn packing_efficiency(seqs: &[PackedSequence], max_len: usize) -> f64 {
    if seqs.is_empty() {
        return 0.0;
    }
    let used: usize = seqs
        .iter()
        .flat_map(|s| &s.segments)
        .map(|g| g.end - g.start)
        .sum();
    used as f64 / (seqs.len() * max_len) as f64
}
