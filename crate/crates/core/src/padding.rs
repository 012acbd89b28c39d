//! Phrase-segmentation-based padding for poem lines.
//!
//! A seven-character line under the 2-2-3 schema splits into phrases of 2,
//! 2, and 3 characters; each phrase is followed by enough `<p>` tokens to
//! stretch the line to `pad_factor` times its original length while keeping
//! every phrase contiguous:
//!
//! ```text
//! [c1,c2,c3,c4,c5,c6,c7] -> [c1,c2,p,p,c3,c4,p,p,c5,c6,c7,p,p,p]
//! ```

use crate::error::{Error, Result};
use crate::vocab::SEGPAD;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationSchema {
    segments: Vec<usize>,
    pad_factor: usize,
}

impl SegmentationSchema {
    pub fn new(segments: Vec<usize>, pad_factor: usize) -> Result<Self> {
        if segments.is_empty() || segments.iter().any(|&s| s == 0) {
            return Err(Error::InvalidInput {
                op: "schema",
                msg: format!("segment lengths must be positive, got {segments:?}"),
            });
        }
        if pad_factor == 0 {
            return Err(Error::InvalidInput {
                op: "schema",
                msg: "pad_factor must be positive".into(),
            });
        }
        Ok(Self { segments, pad_factor })
    }

    /// Parse the textual form used in config files, e.g. "2-2-3".
    pub fn parse(text: &str, pad_factor: usize) -> Result<Self> {
        let segments = text
            .split('-')
            .map(|p| {
                p.parse::<usize>().map_err(|_| Error::InvalidInput {
                    op: "schema",
                    msg: format!("bad segment {p:?} in {text:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(segments, pad_factor)
    }

    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    pub fn pad_factor(&self) -> usize {
        self.pad_factor
    }

    pub fn line_len(&self) -> usize {
        self.segments.iter().sum()
    }

    pub fn padded_line_len(&self) -> usize {
        self.line_len() * self.pad_factor
    }
}

impl std::fmt::Display for SegmentationSchema {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.segments.iter().map(|s| s.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

pub fn segment_line<'a>(line: &'a [u32], schema: &SegmentationSchema) -> Result<Vec<&'a [u32]>> {
    if line.len() != schema.line_len() {
        return Err(Error::Length {
            op: "segment_line",
            expected: schema.line_len(),
            actual: line.len(),
        });
    }
    let mut out = Vec::with_capacity(schema.segments.len());
    let mut start = 0;
    for &m in &schema.segments {
        out.push(&line[start..start + m]);
        start += m;
    }
    Ok(out)
}

/// Pad every line of a poem: each phrase of length m is followed by
/// m * (pad_factor - 1) SEGPAD tokens, so each line (and the whole poem)
/// grows by exactly pad_factor.
pub fn pad_poem(lines: &[Vec<u32>], schema: &SegmentationSchema) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(lines.len() * schema.padded_line_len());
    for line in lines {
        for seg in segment_line(line, schema)? {
            out.extend_from_slice(seg);
            out.extend(std::iter::repeat(SEGPAD).take(seg.len() * (schema.pad_factor - 1)));
        }
    }
    Ok(out)
}

/// Remove all SEGPAD tokens and regroup into lines of `line_len`; a trailing
/// partial line is kept. Works on arbitrary model output, not just
/// `pad_poem` results.
pub fn strip_padding(ids: &[u32], line_len: usize) -> Vec<Vec<u32>> {
    let kept: Vec<u32> = ids.iter().copied().filter(|&id| id != SEGPAD).collect();
    if line_len == 0 {
        return vec![kept];
    }
    kept.chunks(line_len).map(|c| c.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn schema(segs: &[usize], pf: usize) -> SegmentationSchema {
        SegmentationSchema::new(segs.to_vec(), pf).unwrap()
    }

    #[test]
    fn canonical_layout() {
        let line: Vec<u32> = (10..17).collect();
        let padded = pad_poem(&[line], &schema(&[2, 2, 3], 2)).unwrap();
        let p = SEGPAD;
        assert_eq!(padded, vec![10, 11, p, p, 12, 13, p, p, 14, 15, 16, p, p, p]);
        assert_eq!(padded.len(), 14);
    }

    #[test]
    fn segment_sizes_follow_schema() {
        let line: Vec<u32> = (10..17).collect();
        let segs = segment_line(&line, &schema(&[3, 2, 2], 2)).unwrap();
        let sizes: Vec<usize> = segs.iter().map(|s| s.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
        assert_eq!(segs.concat(), line);
    }

    #[test]
    fn length_mismatch_names_both_lengths() {
        let line: Vec<u32> = (10..16).collect();
        let err = segment_line(&line, &schema(&[2, 2, 3], 2)).unwrap_err().to_string();
        assert!(err.contains('7') && err.contains('6'), "{err}");
    }

    #[test]
    fn pad_factor_one_is_identity() {
        let lines: Vec<Vec<u32>> = vec![(10..17).collect(), (20..27).collect()];
        let padded = pad_poem(&lines, &schema(&[2, 2, 3], 1)).unwrap();
        assert_eq!(padded, lines.concat());
    }

    #[test]
    fn strip_inverts_pad_across_schemas() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for segs in [[2usize, 2, 3], [2, 3, 2], [3, 2, 2]] {
            let sch = schema(&segs, 2);
            for _ in 0..1000 {
                let lines: Vec<Vec<u32>> = (0..4)
                    .map(|_| (0..7).map(|_| rng.gen_range(6..100)).collect())
                    .collect();
                let padded = pad_poem(&lines, &sch).unwrap();
                assert_eq!(padded.len(), 2 * 28);
                assert_eq!(strip_padding(&padded, 7), lines);
            }
        }
    }

    #[test]
    fn strip_handles_arbitrary_positions() {
        let p = SEGPAD;
        let ids = vec![10, p, 11, p, p, 12, 13, p];
        assert_eq!(strip_padding(&ids, 3), vec![vec![10, 11, 12], vec![13]]);
    }

    #[test]
    fn strip_without_segpad_just_regroups() {
        let ids: Vec<u32> = (10..16).collect();
        assert_eq!(strip_padding(&ids, 3), vec![vec![10, 11, 12], vec![13, 14, 15]]);
    }

    #[test]
    fn parse_display_roundtrip() {
        let s = SegmentationSchema::parse("2-3-2", 2).unwrap();
        assert_eq!(s.segments(), &[2, 3, 2]);
        assert_eq!(s.to_string(), "2-3-2");
        assert!(SegmentationSchema::parse("2-x-3", 2).is_err());
        assert!(SegmentationSchema::parse("2-0-3", 2).is_err());
    }
}
