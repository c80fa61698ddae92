//! Binary model container: magic line, one-line architecture descriptor,
//! parameter count as little-endian u64, then little-endian f64 values.

use std::io::{BufRead, Write};

use super::{Arch, LearnError, Network};

pub const MAGIC: &[u8] = b"GRASPFORGE-MODEL v1\n";

pub fn write_checkpoint<W: Write>(mut w: W, descriptor: &str, params: &[f64]) -> Result<(), LearnError> {
    if descriptor.contains('\n') {
        return Err(LearnError::Checkpoint("descriptor must be one line".into()));
    }
    w.write_all(MAGIC)?;
    w.write_all(descriptor.as_bytes())?;
    w.write_all(b"\n")?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.len() * 8);
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<(String, Vec<f64>), LearnError> {
    let mut magic = vec![0u8; MAGIC.len()];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(LearnError::Checkpoint("not a model file".into()));
    }
    let mut line = String::new();
    r.read_line(&mut line)?;
    let descriptor = line.trim_end_matches('\n').to_string();
    let mut n = [0u8; 8];
    r.read_exact(&mut n)?;
    let n = u64::from_le_bytes(n) as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 8 {
        return Err(LearnError::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            n * 8,
            bytes.len()
        )));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((descriptor, params))
}

impl Network {
    pub fn save<W: Write>(&self, w: W) -> Result<(), LearnError> {
        write_checkpoint(w, &self.arch.descriptor(), &self.params)
    }

    pub fn load<R: BufRead>(r: R) -> Result<Network, LearnError> {
        let (desc, params) = read_checkpoint(r)?;
        let arch = Arch::parse_descriptor(&desc)?;
        Network::from_params(&arch, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let arch = Arch {
            input_side: 16,
            conv_channels: vec![2, 2],
            fc: vec![7, 3],
            ..Arch::default()
        };
        let net = Network::init(&arch, 0.01, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut buf = Vec::new();
        net.save(&mut buf).unwrap();
        assert!(buf.starts_with(MAGIC));
        let back = Network::load(&buf[..]).unwrap();
        assert_eq!(back, net);
        assert!(Network::load(&buf[..buf.len() - 1]).is_err());
        assert!(Network::load(&b"nonsense"[..]).is_err());
    }
}
