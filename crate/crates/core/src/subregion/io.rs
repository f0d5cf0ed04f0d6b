//! Subregion model files.
//!
//! Layout: magic `SUSRSBM1`, u32 kind (0 = UBM set, 1 = speaker model),
//! the speaker id string for kind 1, u32 class count, then a directory of
//! `(u32 class_index, u64 record_bytes)` entries followed by one GMM record
//! per class in directory order. Speaker files may hold many models.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{SubregionSpeakerModel, SubregionUbmSet};
use crate::binio::{len_u32, write_str, write_u32, write_u64, LeReader};
use crate::error::Result;
use crate::gmm::{write_gmm, DiagGmm};

pub const SUBREGION_MAGIC: &[u8; 8] = b"SUSRSBM1";
const KIND_UBM: u32 = 0;
const KIND_SPEAKER: u32 = 1;

fn write_body<W: Write>(w: &mut W, gmms: &[DiagGmm]) -> Result<()> {
    write_u32(w, len_u32(gmms.len(), "class count")?)?;
    let records: Vec<Vec<u8>> = gmms
        .iter()
        .map(|g| {
            let mut buf = Vec::new();
            write_gmm(&mut buf, g).map(|_| buf)
        })
        .collect::<Result<_>>()?;
    for (c, r) in records.iter().enumerate() {
        write_u32(w, c as u32)?;
        write_u64(w, r.len() as u64)?;
    }
    for r in &records {
        w.write_all(r)?;
    }
    Ok(())
}

fn read_body<R: Read>(r: &mut LeReader<R>) -> Result<Vec<DiagGmm>> {
    let n = r.u32()? as usize;
    if n == 0 || n > 1 << 16 {
        return Err(r.format_error(format!("implausible class count {n}")));
    }
    let mut dir = Vec::with_capacity(n);
    for expected in 0..n {
        let idx = r.u32()? as usize;
        let len = r.u64()?;
        if idx != expected {
            return Err(r.format_error(format!("directory entry {expected} names class {idx}")));
        }
        dir.push(len);
    }
    let mut gmms = Vec::with_capacity(n);
    for len in dir {
        let g = crate::gmm::io_read_record(r)?;
        let actual = 16 + 8 * (g.num_components() + 2 * g.num_components() * g.dim()) as u64;
        if actual != len {
            return Err(r.format_error(format!("directory says {len} bytes, record has {actual}")));
        }
        gmms.push(g);
    }
    Ok(gmms)
}

pub fn write_subregion_ubms<W: Write>(w: &mut W, set: &SubregionUbmSet) -> Result<()> {
    w.write_all(SUBREGION_MAGIC)?;
    write_u32(w, KIND_UBM)?;
    write_body(w, set.classes())
}

pub fn read_subregion_ubms<R: Read>(reader: R) -> Result<SubregionUbmSet> {
    let mut r = LeReader::new(reader, "subregion UBM");
    r.expect_magic(SUBREGION_MAGIC)?;
    if r.u32()? != KIND_UBM {
        return Err(r.format_error("not a subregion UBM set"));
    }
    let gmms = read_body(&mut r)?;
    SubregionUbmSet::new(gmms).map_err(|e| r.format_error(e.to_string()))
}

pub fn write_subregion_speaker<W: Write>(w: &mut W, m: &SubregionSpeakerModel) -> Result<()> {
    w.write_all(SUBREGION_MAGIC)?;
    write_u32(w, KIND_SPEAKER)?;
    write_str(w, &m.speaker_id)?;
    write_body(w, &m.gmms)
}

pub fn read_subregion_speakers<R: Read>(reader: R) -> Result<Vec<SubregionSpeakerModel>> {
    let mut r = LeReader::new(reader, "subregion speaker model");
    let mut out = Vec::new();
    while r.magic_or_eof(SUBREGION_MAGIC)? {
        if r.u32()? != KIND_SPEAKER {
            return Err(r.format_error("not a subregion speaker model"));
        }
        let speaker_id = r.string()?;
        let gmms = read_body(&mut r)?;
        out.push(SubregionSpeakerModel { speaker_id, gmms });
    }
    Ok(out)
}

pub fn write_subregion_ubms_file(path: &Path, set: &SubregionUbmSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_subregion_ubms(&mut w, set)?;
    w.flush()?;
    Ok(())
}

pub fn read_subregion_ubms_file(path: &Path) -> Result<SubregionUbmSet> {
    read_subregion_ubms(BufReader::new(File::open(path)?))
}

pub fn write_subregion_speakers_file(path: &Path, models: &[SubregionSpeakerModel]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for m in models {
        write_subregion_speaker(&mut w, m)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_subregion_speakers_file(path: &Path) -> Result<Vec<SubregionSpeakerModel>> {
    read_subregion_speakers(BufReader::new(File::open(path)?))
}
