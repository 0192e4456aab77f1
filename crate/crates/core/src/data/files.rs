//! On-disk corpus and alignment formats.
//!
//! Corpus file layout (all integers little-endian):
//!
//! ```text
//! magic             8 bytes  "ASRCORP1"
//! n_utts            u32
//! per utterance:
//!   id_len          u32, then id_len bytes of UTF-8
//!   frames          u32
//!   dim             u32
//!   frame_shift_ms  f64
//!   payload         frames*dim f64, row-major
//!   text_len        u32, then text_len bytes of UTF-8
//!   n_runs          u32
//!   per run:        token u32, run_length u32
//! ```
//!
//! The alignment text file has one line per utterance: the utterance id
//! followed by space-separated `token:run_length` pairs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::corpus::{FeatureSequence, Utterance};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ASRCORP1";

fn runs(alignment: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &a in alignment {
        match out.last_mut() {
            Some((tok, len)) if *tok == a => *len += 1,
            _ => out.push((a, 1)),
        }
    }
    out
}

pub fn write_corpus(path: &Path, corpus: &[Utterance]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(corpus.len() as u32).to_le_bytes())?;
    for utt in corpus {
        let id = utt.id.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&(utt.feats.len() as u32).to_le_bytes())?;
        w.write_all(&(utt.feats.dim as u32).to_le_bytes())?;
        w.write_all(&utt.feats.frame_shift_ms.to_le_bytes())?;
        for v in &utt.feats.data {
            w.write_all(&v.to_le_bytes())?;
        }
        let text = utt.transcript.as_bytes();
        w.write_all(&(text.len() as u32).to_le_bytes())?;
        w.write_all(text)?;
        let rs = runs(&utt.alignment);
        w.write_all(&(rs.len() as u32).to_le_bytes())?;
        for (tok, len) in rs {
            w.write_all(&(tok as u32).to_le_bytes())?;
            w.write_all(&(len as u32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Corpus(format!("bad UTF-8: {e}")))
}

pub fn read_corpus(path: &Path, tokens_of: impl Fn(&str) -> Result<Vec<usize>>) -> Result<Vec<Utterance>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Corpus("bad corpus magic".into()));
    }
    let n = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let id = read_string(&mut r)?;
        let frames = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        let shift = read_f64(&mut r)?;
        let mut data = vec![0.0; frames * dim];
        for v in data.iter_mut() {
            *v = read_f64(&mut r)?;
        }
        let transcript = read_string(&mut r)?;
        let n_runs = read_u32(&mut r)? as usize;
        let mut alignment = Vec::with_capacity(frames);
        for _ in 0..n_runs {
            let tok = read_u32(&mut r)? as usize;
            let len = read_u32(&mut r)? as usize;
            alignment.extend(std::iter::repeat(tok).take(len));
        }
        if alignment.len() != frames {
            return Err(Error::Corpus(format!(
                "utterance {id}: alignment covers {} of {} frames",
                alignment.len(),
                frames
            )));
        }
        let tokens = tokens_of(&transcript)?;
        out.push(Utterance {
            id,
            feats: FeatureSequence {
                data,
                dim,
                frame_shift_ms: shift,
            },
            transcript,
            tokens,
            alignment,
        });
    }
    Ok(out)
}

pub fn write_alignments(path: &Path, corpus: &[Utterance]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for utt in corpus {
        write!(w, "{}", utt.id)?;
        for (tok, len) in runs(&utt.alignment) {
            write!(w, " {tok}:{len}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::{generate_synthetic_corpus, SyntheticTaskSpec};

    #[test]
    fn corpus_file_roundtrip_is_bit_exact() {
        let spec = SyntheticTaskSpec::default_toy(5);
        let vocab = spec.vocab();
        let corpus = generate_synthetic_corpus(&spec, 4).unwrap();
        let dir = std::env::temp_dir().join("asrlab_corpus_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("toy.corpus");
        write_corpus(&path, &corpus).unwrap();
        let loaded = read_corpus(&path, |s| vocab.tokenize(s)).unwrap();
        assert_eq!(loaded.len(), corpus.len());
        for (a, b) in corpus.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.transcript, b.transcript);
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(a.alignment, b.alignment);
            let bits_a: Vec<u64> = a.feats.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.feats.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn alignment_file_shape() {
        let spec = SyntheticTaskSpec::default_toy(6);
        let corpus = generate_synthetic_corpus(&spec, 2).unwrap();
        let dir = std::env::temp_dir().join("asrlab_corpus_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("toy.ali");
        write_alignments(&path, &corpus).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        for (line, utt) in lines.iter().zip(&corpus) {
            let mut parts = line.split(' ');
            assert_eq!(parts.next().unwrap(), utt.id);
            let total: usize = parts
                .map(|p| p.split(':').nth(1).unwrap().parse::<usize>().unwrap())
                .sum();
            assert_eq!(total, utt.feats.len());
        }
        std::fs::remove_file(&path).ok();
    }
}
