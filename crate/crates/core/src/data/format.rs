//! Binary heatmap volume files.
//!
//! Layout: `b"VIHM"`, five little-endian `u32` (version = 1, J, F, H, W),
//! then `J·F·H·W` little-endian `f32` in (joint, frame, row, col) order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Result, VinetError};

use super::HeatmapVolume;

pub const MAGIC: &[u8; 4] = b"VIHM";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 4 + 5 * 4;

/// Volume dimensions read from a file header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VolumeHeader {
    pub joints: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl VolumeHeader {
    pub fn numel(&self) -> u64 {
        self.joints as u64 * self.frames as u64 * self.height as u64 * self.width as u64
    }

    pub fn payload_bytes(&self) -> u64 {
        self.numel() * 4
    }
}

fn format_err(offset: u64, msg: impl Into<String>) -> VinetError {
    VinetError::Format { offset, msg: msg.into() }
}

fn parse_header(bytes: &[u8; HEADER_LEN as usize]) -> Result<VolumeHeader> {
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}, expected \"VIHM\"", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    if word(0) != VERSION {
        return Err(format_err(4, format!("unsupported version {}", word(0))));
    }
    let names = ["joint count", "frame count", "height", "width"];
    for (i, name) in names.iter().enumerate() {
        if word(i + 1) == 0 {
            return Err(format_err(8 + 4 * i as u64, format!("{name} is zero")));
        }
    }
    Ok(VolumeHeader {
        joints: word(1) as usize,
        frames: word(2) as usize,
        height: word(3) as usize,
        width: word(4) as usize,
    })
}

fn read_header_from(r: &mut impl Read) -> Result<VolumeHeader> {
    let mut buf = [0u8; HEADER_LEN as usize];
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => return Err(format_err(filled as u64, "truncated header")),
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(format_err(filled as u64, format!("read failed: {e}"))),
        }
    }
    parse_header(&buf)
}

/// Checks the header and that the file holds exactly the declared payload.
pub fn read_header(path: &Path) -> Result<VolumeHeader> {
    let mut file = File::open(path).map_err(|e| VinetError::io(path, e))?;
    let header = read_header_from(&mut file)?;
    let len = file.metadata().map_err(|e| VinetError::io(path, e))?.len();
    let expected = HEADER_LEN + header.payload_bytes();
    if len < expected {
        return Err(format_err(len, format!("payload truncated: file has {len} bytes, header implies {expected}")));
    }
    if len > expected {
        return Err(format_err(expected, format!("{} trailing bytes after payload", len - expected)));
    }
    Ok(header)
}

pub fn save_sequence(path: &Path, volume: &HeatmapVolume) -> Result<()> {
    let file = File::create(path).map_err(|e| VinetError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let dims = volume.dims();
    let mut bytes = Vec::with_capacity(HEADER_LEN as usize);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    for d in dims {
        let d = u32::try_from(d).map_err(|_| VinetError::Config(format!("dimension {d} exceeds u32")))?;
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    w.write_all(&bytes).map_err(|e| VinetError::io(path, e))?;
    for v in volume.data() {
        w.write_all(&v.to_le_bytes()).map_err(|e| VinetError::io(path, e))?;
    }
    w.flush().map_err(|e| VinetError::io(path, e))
}

pub fn load_sequence(path: &Path) -> Result<HeatmapVolume> {
    let header = read_header(path)?;
    let file = File::open(path).map_err(|e| VinetError::io(path, e))?;
    let mut r = BufReader::new(file);
    read_header_from(&mut r)?;
    let mut raw = vec![0u8; header.payload_bytes() as usize];
    r.read_exact(&mut raw).map_err(|_| format_err(HEADER_LEN, "payload truncated"))?;
    HeatmapVolume::new([header.joints, header.frames, header.height, header.width], decode(&raw))
}

/// Reads frames `start..start+len` of every joint by seeking.
pub fn read_frames(path: &Path, start: usize, len: usize) -> Result<HeatmapVolume> {
    let header = read_header(path)?;
    if len == 0 || start + len > header.frames {
        return Err(VinetError::contract(
            "read_frames",
            format!("frames {start}..{} outside 0..{}", start + len, header.frames),
        ));
    }
    let mut file = File::open(path).map_err(|e| VinetError::io(path, e))?;
    let plane = header.height * header.width;
    let mut raw = vec![0u8; len * plane * 4];
    let mut data = Vec::with_capacity(header.joints * len * plane);
    for j in 0..header.joints {
        let offset = HEADER_LEN + ((j * header.frames + start) * plane * 4) as u64;
        file.seek(SeekFrom::Start(offset)).map_err(|e| VinetError::io(path, e))?;
        file.read_exact(&mut raw).map_err(|_| format_err(offset, "payload truncated"))?;
        data.extend(decode(&raw));
    }
    HeatmapVolume::new([header.joints, len, header.height, header.width], data)
}

fn decode(raw: &[u8]) -> Vec<f32> {
    raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect()
}
