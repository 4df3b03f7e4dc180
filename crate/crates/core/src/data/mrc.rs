//! MRC volumes: 1024-byte little-endian header, optional extended header,
//! then nz slices of ny rows of nx samples.

use super::DataError;

pub const HEADER_LEN: usize = 1024;
const OFF_MODE: usize = 12;
const OFF_NSYMBT: usize = 92;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrcMode {
    Int8,
    Int16,
    Float32,
}

impl MrcMode {
    pub fn code(self) -> i32 {
        match self {
            MrcMode::Int8 => 0,
            MrcMode::Int16 => 1,
            MrcMode::Float32 => 2,
        }
    }

    pub fn from_code(code: i32) -> Option<Self> {
        match code {
            0 => Some(MrcMode::Int8),
            1 => Some(MrcMode::Int16),
            2 => Some(MrcMode::Float32),
            _ => None,
        }
    }

    pub fn sample_bytes(self) -> usize {
        match self {
            MrcMode::Int8 => 1,
            MrcMode::Int16 => 2,
            MrcMode::Float32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrcVolume {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub mode: MrcMode,
    /// The raw 1024-byte header as read.
    pub header: Vec<u8>,
    pub extended_header: Vec<u8>,
    /// Samples in file order: index = s·ny·nx + r·nx + c.
    pub data: Vec<f64>,
}

fn word(bytes: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"))
}

pub fn parse_mrc(bytes: &[u8]) -> Result<MrcVolume, DataError> {
    if bytes.len() < HEADER_LEN {
        return Err(DataError::MrcShort { len: bytes.len() });
    }
    let mut dims = [0usize; 3];
    for (i, (name, d)) in ["nx", "ny", "nz"].iter().zip(dims.iter_mut()).enumerate() {
        let v = word(bytes, 4 * i);
        if v < 1 {
            return Err(DataError::MrcField {
                field: name,
                offset: 4 * i,
                value: v as i64,
            });
        }
        *d = v as usize;
    }
    let [nx, ny, nz] = dims;
    let code = word(bytes, OFF_MODE);
    let mode = MrcMode::from_code(code).ok_or(DataError::MrcMode { mode: code, offset: OFF_MODE })?;
    let nsymbt = word(bytes, OFF_NSYMBT);
    if nsymbt < 0 {
        return Err(DataError::MrcField {
            field: "nsymbt",
            offset: OFF_NSYMBT,
            value: nsymbt as i64,
        });
    }
    let start = HEADER_LEN + nsymbt as usize;
    let need = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .and_then(|v| v.checked_mul(mode.sample_bytes()))
        .ok_or(DataError::MrcField {
            field: "nx*ny*nz",
            offset: 0,
            value: i64::MAX,
        })?;
    let have = bytes.len().saturating_sub(start);
    if start > bytes.len() || have < need {
        return Err(DataError::MrcTruncated { offset: start, need, have });
    }
    let payload = &bytes[start..start + need];
    let data: Vec<f64> = match mode {
        MrcMode::Int8 => payload.iter().map(|&b| b as i8 as f64).collect(),
        MrcMode::Int16 => payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        MrcMode::Float32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
    };
    Ok(MrcVolume {
        nx,
        ny,
        nz,
        mode,
        header: bytes[..HEADER_LEN].to_vec(),
        extended_header: bytes[HEADER_LEN..start].to_vec(),
        data,
    })
}

impl MrcVolume {
    /// Builds a volume with a fresh header; values are stored as given and
    /// must fit the mode when written.
    pub fn new(nx: usize, ny: usize, nz: usize, mode: MrcMode, data: Vec<f64>) -> Result<Self, DataError> {
        if nx == 0 || ny == 0 || nz == 0 || data.len() != nx * ny * nz {
            return Err(DataError::Shape(format!(
                "{} samples for extents {nx}x{ny}x{nz}",
                data.len()
            )));
        }
        Ok(Self {
            nx,
            ny,
            nz,
            mode,
            header: Vec::new(),
            extended_header: Vec::new(),
            data,
        })
    }

    pub fn slice(&self, s: usize) -> &[f64] {
        let n = self.nx * self.ny;
        &self.data[s * n..(s + 1) * n]
    }

    pub fn slice_len(&self) -> usize {
        self.nx * self.ny
    }

    /// Serializes with a minimal MRC2014 header (modes 0 and 2 only).
    pub fn to_bytes(&self) -> Result<Vec<u8>, DataError> {
        if self.mode == MrcMode::Int16 {
            return Err(DataError::MrcMode { mode: 1, offset: OFF_MODE });
        }
        let mut h = vec![0u8; HEADER_LEN];
        let put_i = |h: &mut Vec<u8>, off: usize, v: i32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());
        let put_f = |h: &mut Vec<u8>, off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());
        for (i, d) in [self.nx, self.ny, self.nz].into_iter().enumerate() {
            put_i(&mut h, 4 * i, d as i32);
            // mx, my, mz and unit cell lengths
            put_i(&mut h, 28 + 4 * i, d as i32);
            put_f(&mut h, 40 + 4 * i, d as f32);
            put_f(&mut h, 52 + 4 * i, 90.0);
            put_i(&mut h, 64 + 4 * i, i as i32 + 1);
        }
        put_i(&mut h, OFF_MODE, self.mode.code());
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
        }
        put_f(&mut h, 76, lo as f32);
        put_f(&mut h, 80, hi as f32);
        put_f(&mut h, 84, (sum / self.data.len() as f64) as f32);
        put_i(&mut h, 88, 1);
        put_i(&mut h, OFF_NSYMBT, self.extended_header.len() as i32);
        put_i(&mut h, 108, 20140);
        h[208..212].copy_from_slice(b"MAP ");
        h[212..216].copy_from_slice(&[0x44, 0x44, 0, 0]);

        let mut out = h;
        out.extend_from_slice(&self.extended_header);
        match self.mode {
            MrcMode::Int8 => {
                for (i, &v) in self.data.iter().enumerate() {
                    if v.fract() != 0.0 || !(-128.0..=127.0).contains(&v) {
                        return Err(DataError::Shape(format!("sample {i} = {v} does not fit mode 0")));
                    }
                    out.push(v as i8 as u8);
                }
            }
            MrcMode::Float32 => {
                for &v in &self.data {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            MrcMode::Int16 => unreachable!(),
        }
        Ok(out)
    }
}
