//! Binary corpus container.
//!
//! ```text
//! header   magic "DTMAPFDS" (8) | version u32 | context length u32
//! meta     length u64 | JSON bytes
//! records  length u32 | record bytes, repeated until EOF
//! record   episode u64 | agent u32 | chunk u32 | real length u8
//!          K x (rtg f32 | action u8 | timestep u16 | obs 50 bytes)
//!          mask ceil(K/8) bytes, bit i of byte i/8, LSB first
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::DatasetError;
use crate::observation::{Observation, PACKED_OBS_BYTES};

use super::{DatasetMeta, Slot, TrajectoryChunk, CONTEXT_LEN};

pub const MAGIC: &[u8; 8] = b"DTMAPFDS";
pub const FORMAT_VERSION: u32 = 1;

const SLOT_BYTES: usize = 4 + 1 + 2 + PACKED_OBS_BYTES;

/// Size of one record body for context length 50.
pub const RECORD_BYTES: usize = record_bytes(CONTEXT_LEN);

const fn record_bytes(k: usize) -> usize {
    8 + 4 + 4 + 1 + k * SLOT_BYTES + k.div_ceil(8)
}

fn encode_chunk(c: &TrajectoryChunk, buf: &mut Vec<u8>) {
    let k = c.slots.len();
    buf.extend_from_slice(&c.episode_id.to_le_bytes());
    buf.extend_from_slice(&c.agent_id.to_le_bytes());
    buf.extend_from_slice(&c.chunk_index.to_le_bytes());
    buf.push(c.real_len() as u8);
    for s in &c.slots {
        buf.extend_from_slice(&s.rtg.to_le_bytes());
        buf.push(s.action);
        buf.extend_from_slice(&s.timestep.to_le_bytes());
        buf.extend_from_slice(&s.obs.pack());
    }
    let mut mask = vec![0u8; k.div_ceil(8)];
    for (i, m) in c.mask.iter().enumerate() {
        if *m {
            mask[i / 8] |= 1 << (i % 8);
        }
    }
    buf.extend_from_slice(&mask);
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.bytes[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }
}

fn decode_chunk(bytes: &[u8], k: usize) -> Result<TrajectoryChunk, DatasetError> {
    if bytes.len() != record_bytes(k) {
        return Err(DatasetError::Format(format!(
            "record of {} bytes, expected {}",
            bytes.len(),
            record_bytes(k)
        )));
    }
    let mut cur = Cursor { bytes, pos: 0 };
    let episode_id = u64::from_le_bytes(cur.take());
    let agent_id = u32::from_le_bytes(cur.take());
    let chunk_index = u32::from_le_bytes(cur.take());
    let [real] = cur.take::<1>();
    let mut slots = Vec::with_capacity(k);
    for _ in 0..k {
        let rtg = f32::from_le_bytes(cur.take());
        let [action] = cur.take::<1>();
        let timestep = u16::from_le_bytes(cur.take());
        let obs = Observation::unpack(&cur.take::<PACKED_OBS_BYTES>());
        slots.push(Slot {
            rtg,
            action,
            timestep,
            obs,
        });
    }
    let mask_bytes = &bytes[cur.pos..];
    let mask: Vec<bool> = (0..k).map(|i| mask_bytes[i / 8] >> (i % 8) & 1 == 1).collect();
    let chunk = TrajectoryChunk {
        episode_id,
        agent_id,
        chunk_index,
        slots,
        mask,
    };
    if chunk.real_len() != real as usize || !chunk.is_well_formed() {
        return Err(DatasetError::Format(format!(
            "chunk {episode_id}/{agent_id}/{chunk_index} violates the padding invariants"
        )));
    }
    Ok(chunk)
}

/// Writes a complete dataset file.
pub fn write_dataset(
    path: &Path,
    meta: &DatasetMeta,
    chunks: &[TrajectoryChunk],
) -> Result<(), DatasetError> {
    let k = meta.spec.context_len;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(k as u32).to_le_bytes())?;
    let json = serde_json::to_vec(meta)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(record_bytes(k));
    for c in chunks {
        if c.slots.len() != k {
            return Err(DatasetError::Format(format!(
                "chunk has {} slots, file context length is {k}",
                c.slots.len()
            )));
        }
        buf.clear();
        encode_chunk(c, &mut buf);
        w.write_all(&(buf.len() as u32).to_le_bytes())?;
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Streaming reader over the records of a dataset file.
pub struct DatasetReader<R> {
    inner: R,
    meta: DatasetMeta,
    context_len: usize,
    buf: Vec<u8>,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut inner: R) -> Result<Self, DatasetError> {
        let mut header = [0u8; 16];
        inner.read_exact(&mut header)?;
        if &header[..8] != MAGIC {
            return Err(DatasetError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(DatasetError::Format(format!("unsupported version {version}")));
        }
        let context_len = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        if context_len == 0 || context_len > u8::MAX as usize {
            return Err(DatasetError::Format(format!("bad context length {context_len}")));
        }
        let mut len = [0u8; 8];
        inner.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        inner.read_exact(&mut json)?;
        let meta: DatasetMeta = serde_json::from_slice(&json)?;
        Ok(Self {
            inner,
            meta,
            context_len,
            buf: Vec::new(),
        })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    fn next_chunk(&mut self) -> Result<Option<TrajectoryChunk>, DatasetError> {
        let mut len = [0u8; 4];
        match self.inner.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_le_bytes(len) as usize;
        if len != record_bytes(self.context_len) {
            return Err(DatasetError::Format(format!("record length {len}")));
        }
        self.buf.resize(len, 0);
        self.inner.read_exact(&mut self.buf)?;
        decode_chunk(&self.buf, self.context_len).map(Some)
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<TrajectoryChunk, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_chunk().transpose()
    }
}

/// Reads a whole dataset file into memory.
pub fn read_dataset(path: &Path) -> Result<(DatasetMeta, Vec<TrajectoryChunk>), DatasetError> {
    let mut reader = DatasetReader::open(path)?;
    let chunks = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok((reader.meta, chunks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_chunk(real: usize) -> TrajectoryChunk {
        let mut slots = vec![Slot::default(); CONTEXT_LEN];
        for (i, s) in slots.iter_mut().take(real).enumerate() {
            let mut obs = Observation::zeros();
            obs.set(i % 4, i % 10, (i * 7) % 10, true);
            *s = Slot {
                rtg: 19.7 - i as f32 * 0.3,
                action: (i % 5) as u8,
                timestep: 100 + i as u16,
                obs,
            };
        }
        TrajectoryChunk {
            episode_id: 0xdead_beef,
            agent_id: 7,
            chunk_index: 2,
            slots,
            mask: (0..CONTEXT_LEN).map(|i| i < real).collect(),
        }
    }

    #[test]
    fn record_layout_size() {
        assert_eq!(RECORD_BYTES, 17 + 50 * 57 + 7);
        let mut buf = Vec::new();
        encode_chunk(&sample_chunk(20), &mut buf);
        assert_eq!(buf.len(), RECORD_BYTES);
        assert_eq!(&buf[..8], &0xdead_beefu64.to_le_bytes());
        assert_eq!(buf[16], 20);
    }

    #[test]
    fn chunk_round_trip() {
        for real in [1, 20, 49, 50] {
            let c = sample_chunk(real);
            let mut buf = Vec::new();
            encode_chunk(&c, &mut buf);
            assert_eq!(decode_chunk(&buf, CONTEXT_LEN).unwrap(), c);
        }
    }

    #[test]
    fn rejects_dirty_padding() {
        let mut c = sample_chunk(10);
        c.slots[30].action = 2;
        let mut buf = Vec::new();
        encode_chunk(&c, &mut buf);
        assert!(decode_chunk(&buf, CONTEXT_LEN).is_err());
    }
}
