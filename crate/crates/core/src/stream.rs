//! Compressed stream format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PCDC"
//! 4       1     version (1)
//! 5       4     sample rate, u32 LE
//! 9       2     hop M, u16 LE
//! 11      1     groups G
//! 12      1     residual layers R
//! 13      2     codebook size K, u16 LE
//! 15      4     frame count, u32 LE
//! 19      1     prompt flag (0 = prompt at receiver, 1 = embedded)
//! 20      ...   [flag = 1] D as u16 LE, then D half floats of z_PC and D of z_PV, LE
//!         ...   code indices, b = ceil(log2 K) bits each, MSB first
//! ```
//!
//! Indices run frame-major, then group, then residual layer. The last byte is
//! padded with zero bits. Three frames of one 10-bit code `[1, 2, 1023]` pack
//! as `00000000 01000000 00101111 11111100`.
//!
//! Reading is strict: the byte length must match the header exactly, padding
//! bits must be zero and every index must be below `K`.

use alloc::vec::Vec;

use half::f16;

use crate::error::{corrupt, invalid_input};
use crate::grvq::{bits_for, CodeIndices};
use crate::Result;

pub const MAGIC: &[u8; 4] = b"PCDC";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u8,
    pub sample_rate: u32,
    pub hop: u16,
    pub groups: u8,
    pub residuals: u8,
    pub codebook_size: u16,
    pub n_frames: u32,
    pub prompt_flag: u8,
}

impl StreamHeader {
    pub fn n_q(&self) -> usize {
        self.groups as usize * self.residuals as usize
    }

    pub fn bits_per_code(&self) -> u32 {
        bits_for(self.codebook_size as usize)
    }

    fn validate(&self) -> core::result::Result<(), &'static str> {
        if self.version != VERSION {
            return Err("unsupported version");
        }
        if self.sample_rate == 0 || self.hop == 0 {
            return Err("sample rate and hop must be positive");
        }
        if self.groups == 0 || self.residuals == 0 {
            return Err("groups and residuals must be positive");
        }
        if self.codebook_size == 0 {
            return Err("codebook size must be positive");
        }
        if self.prompt_flag > 1 {
            return Err("prompt flag must be 0 or 1");
        }
        Ok(())
    }

    fn payload_bits(&self) -> Option<u64> {
        (self.n_frames as u64)
            .checked_mul(self.n_q() as u64)?
            .checked_mul(self.bits_per_code() as u64)
    }
}

/// Half-precision prompt vectors carried in the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBlock {
    pub z_pc: Vec<f16>,
    pub z_pv: Vec<f16>,
}

impl PromptBlock {
    pub fn from_f64(z_pc: &[f64], z_pv: &[f64]) -> Self {
        Self {
            z_pc: z_pc.iter().map(|&v| f16::from_f64(v)).collect(),
            z_pv: z_pv.iter().map(|&v| f16::from_f64(v)).collect(),
        }
    }

    pub fn z_pc_f64(&self) -> Vec<f64> {
        self.z_pc.iter().map(|v| v.to_f64()).collect()
    }

    pub fn z_pv_f64(&self) -> Vec<f64> {
        self.z_pv.iter().map(|v| v.to_f64()).collect()
    }

    pub fn dim(&self) -> usize {
        self.z_pc.len()
    }

    /// Bits spent on the two vectors.
    pub fn side_info_bits(&self) -> u64 {
        16 * (self.z_pc.len() + self.z_pv.len()) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub header: StreamHeader,
    pub indices: CodeIndices,
    pub prompts: Option<PromptBlock>,
}

struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    filled: u32,
}

impl BitWriter {
    fn push(&mut self, value: u32, bits: u32) {
        for i in (0..bits).rev() {
            self.acc = (self.acc << 1) | ((value >> i) & 1);
            self.filled += 1;
            if self.filled == 8 {
                self.out.push(self.acc as u8);
                self.acc = 0;
                self.filled = 0;
            }
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.out.push((self.acc << (8 - self.filled)) as u8);
        }
        self.out
    }
}

/// Serializes a stream. Inconsistent inputs are rejected.
pub fn write_stream(
    header: &StreamHeader,
    indices: &CodeIndices,
    prompts: Option<&PromptBlock>,
) -> Result<Vec<u8>> {
    header
        .validate()
        .map_err(|e| invalid_input!("bad header: {e}"))?;
    if indices.n_frames != header.n_frames as usize || indices.n_q != header.n_q() {
        return Err(invalid_input!(
            "indices are {}×{}, header says {}×{}",
            indices.n_frames,
            indices.n_q,
            header.n_frames,
            header.n_q()
        ));
    }
    if let Some(&bad) = indices
        .data
        .iter()
        .find(|&&i| i >= header.codebook_size as u32)
    {
        return Err(invalid_input!(
            "index {bad} is not below K = {}",
            header.codebook_size
        ));
    }
    match (header.prompt_flag, prompts) {
        (0, None) | (1, Some(_)) => {}
        _ => {
            return Err(invalid_input!(
                "prompt flag {} does not match prompt block",
                header.prompt_flag
            ))
        }
    }
    let mut out = Vec::with_capacity(HEADER_BYTES);
    out.extend_from_slice(MAGIC);
    out.push(header.version);
    out.extend_from_slice(&header.sample_rate.to_le_bytes());
    out.extend_from_slice(&header.hop.to_le_bytes());
    out.push(header.groups);
    out.push(header.residuals);
    out.extend_from_slice(&header.codebook_size.to_le_bytes());
    out.extend_from_slice(&header.n_frames.to_le_bytes());
    out.push(header.prompt_flag);
    if let Some(p) = prompts {
        if p.z_pc.len() != p.z_pv.len() || p.z_pc.len() > u16::MAX as usize {
            return Err(invalid_input!(
                "prompt vectors have lengths {} and {}",
                p.z_pc.len(),
                p.z_pv.len()
            ));
        }
        out.extend_from_slice(&(p.z_pc.len() as u16).to_le_bytes());
        for v in p.z_pc.iter().chain(&p.z_pv) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let b = header.bits_per_code();
    let mut w = BitWriter {
        out,
        acc: 0,
        filled: 0,
    };
    for &i in &indices.data {
        w.push(i, b);
    }
    Ok(w.finish())
}

fn u16_at(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Parses and fully validates a stream.
pub fn read_stream(bytes: &[u8]) -> Result<Stream> {
    if bytes.len() < HEADER_BYTES {
        return Err(corrupt!(
            "stream of {} bytes is shorter than the {HEADER_BYTES}-byte header",
            bytes.len()
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt!("bad magic"));
    }
    let header = StreamHeader {
        version: bytes[4],
        sample_rate: u32_at(bytes, 5),
        hop: u16_at(bytes, 9),
        groups: bytes[11],
        residuals: bytes[12],
        codebook_size: u16_at(bytes, 13),
        n_frames: u32_at(bytes, 15),
        prompt_flag: bytes[19],
    };
    header.validate().map_err(|e| corrupt!("{e}"))?;
    let mut at = HEADER_BYTES;
    let prompts = if header.prompt_flag == 1 {
        if bytes.len() < at + 2 {
            return Err(corrupt!("truncated prompt block"));
        }
        let d = u16_at(bytes, at) as usize;
        at += 2;
        let need = 4 * d;
        if bytes.len() - at < need {
            return Err(corrupt!("truncated prompt block"));
        }
        let vals: Vec<f16> = bytes[at..at + need]
            .chunks_exact(2)
            .map(|c| f16::from_le_bytes([c[0], c[1]]))
            .collect();
        at += need;
        let (pc, pv) = vals.split_at(d);
        Some(PromptBlock {
            z_pc: pc.to_vec(),
            z_pv: pv.to_vec(),
        })
    } else {
        None
    };
    let bits = header
        .payload_bits()
        .ok_or_else(|| corrupt!("payload size overflows"))?;
    let payload_bytes = bits.div_ceil(8);
    let have = (bytes.len() - at) as u64;
    if have != payload_bytes {
        return Err(corrupt!(
            "payload has {have} bytes, header implies {payload_bytes}"
        ));
    }
    let payload = &bytes[at..];
    let b = header.bits_per_code();
    let count = header.n_frames as usize * header.n_q();
    let mut data = Vec::with_capacity(count);
    let mut pos = 0u64;
    for _ in 0..count {
        let mut v = 0u32;
        for _ in 0..b {
            let byte = payload[(pos / 8) as usize];
            v = (v << 1) | ((byte >> (7 - pos % 8)) & 1) as u32;
            pos += 1;
        }
        if v >= header.codebook_size as u32 {
            return Err(corrupt!(
                "index {v} is not below K = {}",
                header.codebook_size
            ));
        }
        data.push(v);
    }
    while pos < payload_bytes * 8 {
        if (payload[(pos / 8) as usize] >> (7 - pos % 8)) & 1 != 0 {
            return Err(corrupt!("non-zero padding bits"));
        }
        pos += 1;
    }
    Ok(Stream {
        header,
        indices: CodeIndices::new(header.n_frames as usize, header.n_q(), data),
        prompts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;
    use alloc::vec;

    fn header(n_frames: u32, g: u8, r: u8, k: u16) -> StreamHeader {
        StreamHeader {
            version: 1,
            sample_rate: 24_000,
            hop: 320,
            groups: g,
            residuals: r,
            codebook_size: k,
            n_frames,
            prompt_flag: 0,
        }
    }

    #[test]
    fn worked_example() {
        let h = header(3, 1, 1, 1024);
        let idx = CodeIndices::new(3, 1, vec![1, 2, 1023]);
        let bytes = write_stream(&h, &idx, None).unwrap();
        assert_eq!(
            &bytes[HEADER_BYTES..],
            &[0b0000_0000, 0b0100_0000, 0b0010_1111, 0b1111_1100]
        );
        assert_eq!(read_stream(&bytes).unwrap().indices, idx);
    }

    #[test]
    fn sizes() {
        let h = header(0, 2, 2, 1024);
        assert_eq!(
            write_stream(&h, &CodeIndices::new(0, 4, vec![]), None)
                .unwrap()
                .len(),
            HEADER_BYTES
        );
        let h = header(4, 1, 1, 1024);
        assert_eq!(
            write_stream(&h, &CodeIndices::new(4, 1, vec![0; 4]), None)
                .unwrap()
                .len(),
            HEADER_BYTES + 5
        );
    }

    #[test]
    fn header_layout() {
        let h = StreamHeader {
            sample_rate: 0x0102_0304,
            ..header(0x0105, 2, 3, 0x0405)
        };
        let idx = CodeIndices::new(0x0105, 6, vec![0; 0x0105 * 6]);
        let bytes = write_stream(&h, &idx, None).unwrap();
        assert_eq!(
            &bytes[..HEADER_BYTES],
            &[
                b'P', b'C', b'D', b'C', 1, 4, 3, 2, 1, 0x40, 0x01, 2, 3, 0x05, 0x04, 0x05, 0x01, 0,
                0, 0
            ]
        );
    }

    #[test]
    fn prompts_round_trip_within_half_precision() {
        let pc = [0.1, -2.5, 3.25, 1e-3];
        let pv = [100.0, -0.333, 0.0, 7.77];
        let block = PromptBlock::from_f64(&pc, &pv);
        let h = StreamHeader {
            prompt_flag: 1,
            ..header(2, 2, 1, 16)
        };
        let idx = CodeIndices::new(2, 2, vec![3, 15, 0, 9]);
        let bytes = write_stream(&h, &idx, Some(&block)).unwrap();
        assert_eq!(bytes.len(), HEADER_BYTES + 2 + 16 + 2);
        let s = read_stream(&bytes).unwrap();
        assert_eq!(s.prompts.as_ref(), Some(&block));
        for (a, b) in pc.iter().zip(s.prompts.unwrap().z_pc_f64()) {
            assert!((a - b).abs() <= a.abs() * 2f64.powi(-11) + 6e-8);
        }
        assert_eq!(block.side_info_bits(), 16 * 2 * 4);
    }

    #[test]
    fn write_rejects_inconsistent_input() {
        let h = header(1, 1, 1, 4);
        assert!(matches!(
            write_stream(&h, &CodeIndices::new(1, 1, vec![4]), None),
            Err(Error::InvalidInput(_))
        ));
        assert!(write_stream(&h, &CodeIndices::new(2, 1, vec![0, 0]), None).is_err());
        let block = PromptBlock::from_f64(&[0.0], &[0.0]);
        assert!(write_stream(&h, &CodeIndices::new(1, 1, vec![0]), Some(&block)).is_err());
        let bad = PromptBlock::from_f64(&[0.0], &[0.0, 1.0]);
        let hp = StreamHeader {
            prompt_flag: 1,
            ..h
        };
        assert!(write_stream(&hp, &CodeIndices::new(1, 1, vec![0]), Some(&bad)).is_err());
    }

    #[test]
    fn read_rejects_corruption() {
        assert!(matches!(read_stream(&[]), Err(Error::CorruptStream(_))));
        let h = header(3, 1, 1, 1000);
        let good = write_stream(&h, &CodeIndices::new(3, 1, vec![1, 2, 999]), None).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_stream(&bad), Err(Error::CorruptStream(_))));
        assert!(read_stream(&good[..good.len() - 1]).is_err());
        let mut long = good.clone();
        long.push(0);
        assert!(read_stream(&long).is_err());
        let mut pad = good.clone();
        *pad.last_mut().unwrap() |= 1;
        assert!(read_stream(&pad).is_err());
        // 1000 ≤ index < 1024 fits in 10 bits but is out of range.
        let mut oob = good;
        let n = oob.len();
        oob[n - 1] |= 0b1111_1100;
        oob[n - 2] |= 0b0000_0011;
        assert!(read_stream(&oob).is_err());
    }
}
