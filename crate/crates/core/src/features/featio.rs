//! FEAT binary records: magic, version, utt id, `T`, `D`, then `T*D` f32.
//!
//! A file may hold several records back to back; such archives are how a
//! corpus is stored on disk.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::FeatureMatrix;
use crate::binio::{len_u32, write_f32, write_str, write_u32, LeReader};
use crate::error::Result;

pub const FEAT_MAGIC: &[u8; 8] = b"SUSRFEAT";
const FEAT_VERSION: u32 = 1;

pub fn write_feat<W: Write>(w: &mut W, m: &FeatureMatrix) -> Result<()> {
    w.write_all(FEAT_MAGIC)?;
    write_u32(w, FEAT_VERSION)?;
    write_str(w, m.utt_id())?;
    write_u32(w, len_u32(m.num_frames(), "frame count")?)?;
    write_u32(w, len_u32(m.dim(), "dimension")?)?;
    for v in m.data() {
        write_f32(w, *v as f32)?;
    }
    Ok(())
}

fn read_one<R: Read>(r: &mut LeReader<R>) -> Result<Option<FeatureMatrix>> {
    if !r.magic_or_eof(FEAT_MAGIC)? {
        return Ok(None);
    }
    let version = r.u32()?;
    if version != FEAT_VERSION {
        return Err(r.format_error(format!("unsupported version {version}")));
    }
    let utt_id = r.string()?;
    let t = r.u32()? as usize;
    let d = r.u32()? as usize;
    if d == 0 {
        return Err(r.format_error("dimension is zero"));
    }
    let mut data = Vec::with_capacity(t.saturating_mul(d).min(1 << 26));
    for _ in 0..t * d {
        data.push(r.f32()? as f64);
    }
    FeatureMatrix::new(utt_id, d, data).map(Some).map_err(|e| r.format_error(e.to_string()))
}

/// Reads every record of a FEAT stream.
pub fn read_feat_archive<R: Read>(reader: R) -> Result<Vec<FeatureMatrix>> {
    let mut r = LeReader::new(reader, "FEAT");
    let mut out = Vec::new();
    while let Some(m) = read_one(&mut r)? {
        out.push(m);
    }
    Ok(out)
}

pub fn read_feat_file(path: &Path) -> Result<Vec<FeatureMatrix>> {
    read_feat_archive(BufReader::new(File::open(path)?))
}

pub fn write_feat_archive(path: &Path, mats: &[FeatureMatrix]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for m in mats {
        write_feat(&mut w, m)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn truncated_and_wrong_magic_fail() {
        let m = FeatureMatrix::from_rows("u", &[vec![1.0, 2.0]]).unwrap();
        let mut buf = Vec::new();
        write_feat(&mut buf, &m).unwrap();
        assert!(read_feat_archive(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_feat_archive(&bad[..]).is_err());
        let all = read_feat_archive(&buf[..]).unwrap();
        assert_eq!(all.len(), 1);
    }

    proptest! {
        #[test]
        fn archive_roundtrip_is_byte_identical(
            rows in proptest::collection::vec(proptest::collection::vec(-1e4f64..1e4, 3), 0..20),
            id in "[a-z0-9_]{1,12}",
        ) {
            let m = FeatureMatrix::new(id, 3, rows.concat()).unwrap();
            let mut first = Vec::new();
            write_feat(&mut first, &m).unwrap();
            write_feat(&mut first, &m).unwrap();
            let back = read_feat_archive(&first[..]).unwrap();
            prop_assert_eq!(back.len(), 2);
            let mut second = Vec::new();
            for b in &back {
                write_feat(&mut second, b).unwrap();
            }
            prop_assert_eq!(first, second);
        }
    }
}
