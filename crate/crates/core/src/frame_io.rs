//! Little-endian binary files for cached frames and transmitted bits.
//!
//! Frame file:
//!
//! | offset | type     | field                         |
//! |--------|----------|-------------------------------|
//! | 0      | [u8; 4]  | magic `CDCF`                  |
//! | 4      | u32      | version (1)                   |
//! | 8      | f64      | baud rate, Hz                 |
//! | 16     | u32      | samples per symbol            |
//! | 20     | u64      | samples per polarization `n`  |
//! | 28     | f64 × 2n | X polarization, re/im pairs   |
//! | …      | f64 × 2n | Y polarization, re/im pairs   |
//!
//! Bit file: magic `CDCB`, version u32, seed u64, bit count u64, then the
//! bits packed eight per byte, most significant bit first.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::signal::{BitStream, SampleFrame};
use crate::{CdcError, Result};

const FRAME_MAGIC: &[u8; 4] = b"CDCF";
const BITS_MAGIC: &[u8; 4] = b"CDCB";
const VERSION: u32 = 1;

fn read_array<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn check_header(r: &mut impl Read, magic: &[u8; 4], what: &'static str) -> Result<()> {
    if &read_array::<4>(r)? != magic {
        return Err(CdcError::format(what, "bad magic"));
    }
    let version = u32::from_le_bytes(read_array(r)?);
    if version != VERSION {
        return Err(CdcError::format(
            what,
            format!("unsupported version {version}"),
        ));
    }
    Ok(())
}

pub fn write_frame(w: &mut impl Write, frame: &SampleFrame) -> Result<()> {
    w.write_all(FRAME_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&frame.baud_rate.to_le_bytes())?;
    w.write_all(&(frame.samples_per_symbol as u32).to_le_bytes())?;
    w.write_all(&(frame.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(16 * frame.len());
    for pol in [&frame.x, &frame.y] {
        buf.clear();
        for s in pol.iter() {
            buf.extend_from_slice(&s.re.to_le_bytes());
            buf.extend_from_slice(&s.im.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_frame(r: &mut impl Read) -> Result<SampleFrame> {
    check_header(r, FRAME_MAGIC, "frame file")?;
    let baud = f64::from_le_bytes(read_array(r)?);
    let sps = u32::from_le_bytes(read_array(r)?) as usize;
    let n = u64::from_le_bytes(read_array(r)?) as usize;
    let mut read_pol = || -> Result<Vec<Complex64>> {
        let mut raw = vec![0u8; 16 * n];
        r.read_exact(&mut raw)?;
        Ok(raw
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect())
    };
    let x = read_pol()?;
    let y = read_pol()?;
    SampleFrame::new(x, y, sps, baud)
}

pub fn write_bits(w: &mut impl Write, bits: &BitStream) -> Result<()> {
    w.write_all(BITS_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&bits.seed.to_le_bytes())?;
    w.write_all(&(bits.len() as u64).to_le_bytes())?;
    let packed: Vec<u8> = bits
        .bits
        .chunks(8)
        .map(|c| {
            c.iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | (b & 1) << (7 - i))
        })
        .collect();
    w.write_all(&packed)?;
    Ok(())
}

pub fn read_bits(r: &mut impl Read) -> Result<BitStream> {
    check_header(r, BITS_MAGIC, "bit file")?;
    let seed = u64::from_le_bytes(read_array(r)?);
    let n = u64::from_le_bytes(read_array(r)?) as usize;
    let mut packed = vec![0u8; n.div_ceil(8)];
    r.read_exact(&mut packed)?;
    let bits = (0..n).map(|i| packed[i / 8] >> (7 - i % 8) & 1).collect();
    Ok(BitStream { bits, seed })
}

/// Writes `contents` to a temporary sibling, then renames it into place.
pub fn write_atomic(path: &Path, contents: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        contents(&mut f)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_frame(path: &Path, frame: &SampleFrame) -> Result<()> {
    write_atomic(path, |f| {
        let mut w = io::BufWriter::new(f);
        write_frame(&mut w, frame)?;
        w.flush()?;
        Ok(())
    })
}

pub fn load_frame(path: &Path) -> Result<SampleFrame> {
    read_frame(&mut io::BufReader::new(fs::File::open(path)?))
}

pub fn save_bits(path: &Path, bits: &BitStream) -> Result<()> {
    write_atomic(path, |f| {
        let mut w = io::BufWriter::new(f);
        write_bits(&mut w, bits)?;
        w.flush()?;
        Ok(())
    })
}

pub fn load_bits(path: &Path) -> Result<BitStream> {
    read_bits(&mut io::BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let f = SampleFrame::new(
            vec![Complex64::new(1.5, -2.0)],
            vec![Complex64::new(0.25, 4.0)],
            2,
            32e9,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_frame(&mut buf, &f).unwrap();
        assert_eq!(buf.len(), 28 + 32);
        assert_eq!(&buf[..4], b"CDCF");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(buf[8..16].try_into().unwrap()), 32e9);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[20..28].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(buf[28..36].try_into().unwrap()), 1.5);
        assert_eq!(f64::from_le_bytes(buf[52..60].try_into().unwrap()), 4.0);
        assert_eq!(read_frame(&mut buf.as_slice()).unwrap(), f);
    }

    #[test]
    fn bits_round_trip_with_partial_byte() {
        let b = BitStream::random(77, 42);
        let mut buf = Vec::new();
        write_bits(&mut buf, &b).unwrap();
        assert_eq!(buf.len(), 24 + 10);
        assert_eq!(read_bits(&mut buf.as_slice()).unwrap(), b);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let mut buf = Vec::new();
        write_bits(&mut buf, &BitStream::random(16, 1)).unwrap();
        assert!(matches!(
            read_frame(&mut buf.as_slice()),
            Err(CdcError::Format { .. })
        ));
        buf.truncate(buf.len() - 1);
        assert!(read_bits(&mut buf.as_slice()).is_err());
    }
}
