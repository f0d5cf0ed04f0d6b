//! GMM model records: magic `SUSRGMM1`, u32 C, u32 D, then weights, means
//! and variances as little-endian f64. A speaker model is a GMM record
//! followed by its speaker id and UBM id strings; speaker files may hold
//! many such records.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DiagGmm, SpeakerModel};
use crate::binio::{len_u32, write_f64s, write_str, write_u32, LeReader};
use crate::error::Result;

pub const GMM_MAGIC: &[u8; 8] = b"SUSRGMM1";

pub fn write_gmm<W: Write>(w: &mut W, g: &DiagGmm) -> Result<()> {
    w.write_all(GMM_MAGIC)?;
    write_u32(w, len_u32(g.num_components(), "component count")?)?;
    write_u32(w, len_u32(g.dim(), "dimension")?)?;
    write_f64s(w, g.weights())?;
    write_f64s(w, g.means())?;
    write_f64s(w, g.vars())?;
    Ok(())
}

fn read_body<R: Read>(r: &mut LeReader<R>) -> Result<DiagGmm> {
    let c = r.u32()? as usize;
    let d = r.u32()? as usize;
    if c == 0 || d == 0 || c.saturating_mul(d) > (1 << 28) {
        return Err(r.format_error(format!("implausible shape {c} x {d}")));
    }
    let weights = r.f64s(c)?;
    let means = r.f64s(c * d)?;
    let vars = r.f64s(c * d)?;
    DiagGmm::new(weights, means, vars).map_err(|e| r.format_error(e.to_string()))
}

pub(crate) fn read_gmm_record<R: Read>(r: &mut LeReader<R>) -> Result<DiagGmm> {
    r.expect_magic(GMM_MAGIC)?;
    read_body(r)
}

pub fn read_gmm<R: Read>(reader: R) -> Result<DiagGmm> {
    let mut r = LeReader::new(reader, "GMM");
    read_gmm_record(&mut r)
}

pub fn read_gmm_file(path: &Path) -> Result<DiagGmm> {
    read_gmm(BufReader::new(File::open(path)?))
}

pub fn write_gmm_file(path: &Path, g: &DiagGmm) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_gmm(&mut w, g)?;
    w.flush()?;
    Ok(())
}

pub fn write_speaker_model<W: Write>(w: &mut W, m: &SpeakerModel) -> Result<()> {
    write_gmm(w, &m.gmm)?;
    write_str(w, &m.speaker_id)?;
    write_str(w, &m.ubm_id)?;
    Ok(())
}

pub fn read_speaker_models<R: Read>(reader: R) -> Result<Vec<SpeakerModel>> {
    let mut r = LeReader::new(reader, "GMM speaker model");
    let mut out = Vec::new();
    while r.magic_or_eof(GMM_MAGIC)? {
        let gmm = read_body(&mut r)?;
        let speaker_id = r.string()?;
        let ubm_id = r.string()?;
        out.push(SpeakerModel { speaker_id, gmm, ubm_id });
    }
    Ok(out)
}

pub fn read_speaker_models_file(path: &Path) -> Result<Vec<SpeakerModel>> {
    read_speaker_models(BufReader::new(File::open(path)?))
}

pub fn write_speaker_models_file(path: &Path, models: &[SpeakerModel]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for m in models {
        write_speaker_model(&mut w, m)?;
    }
    w.flush()?;
    Ok(())
}
