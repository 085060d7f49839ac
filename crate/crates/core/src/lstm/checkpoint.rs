//! Binary checkpoints with a sidecar manifest.
//!
//! Layout: `NLSTM1`, then `V, emb, hidden, layers` as u32, dropout as f64,
//! the cell kind as u8 (0 lstm, 1 rnn), window as u32, carry-state as u8,
//! then every tensor as little-endian f64 in parameter tensor order.
//! The manifest lists tensor names and shapes and the file's sha256.

use std::path::{Path, PathBuf};

use super::network::{CellKind, LstmNetwork, NetworkShape};
use crate::error::{Error, Result};
use crate::util::sha256_hex;

const MAGIC: &[u8] = b"NLSTM1";

pub fn to_bytes(net: &LstmNetwork) -> Vec<u8> {
    let s = &net.shape;
    let mut out = MAGIC.to_vec();
    for v in [s.vocab_size, s.emb_dim, s.hidden, s.layers] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&s.dropout.to_le_bytes());
    out.push(match s.cell {
        CellKind::Lstm => 0,
        CellKind::Rnn => 1,
    });
    out.extend_from_slice(&(s.window as u32).to_le_bytes());
    out.push(s.carry_state as u8);
    for (_, t) in net.params.tensors() {
        for x in t {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.origin, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<LstmNetwork> {
    if !bytes.starts_with(MAGIC) {
        return Err(Error::format(origin, "not a network checkpoint"));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
        origin,
    };
    let (vocab_size, emb_dim, hidden, layers) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let dropout = r.f64()?;
    let cell = match r.u8()? {
        0 => CellKind::Lstm,
        1 => CellKind::Rnn,
        b => return Err(Error::format(origin, format!("unknown cell kind {b}"))),
    };
    let window = r.u32()?;
    let carry_state = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::format(origin, format!("bad carry-state flag {b}"))),
    };
    let shape = NetworkShape {
        vocab_size,
        emb_dim,
        hidden,
        layers,
        cell,
        dropout,
        window,
        carry_state,
    };
    shape
        .validate()
        .map_err(|e| Error::format(origin, e.to_string()))?;
    let mut net = LstmNetwork::zeros(shape)?;
    let expected = 8 * net.params.parameter_count();
    if bytes.len() - r.pos != expected {
        return Err(Error::format(
            origin,
            format!("expected {expected} parameter bytes, found {}", bytes.len() - r.pos),
        ));
    }
    for t in net.params.tensors_mut() {
        for x in t.iter_mut() {
            *x = r.f64()?;
        }
    }
    if !net.params.all_finite() {
        return Err(Error::format(origin, "non-finite parameter"));
    }
    Ok(net)
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

fn manifest(net: &LstmNetwork, digest: &str) -> String {
    let s = &net.shape;
    let mut out = format!(
        "sha256 = {digest}\ncell = {}\nvocab_size = {}\nemb_dim = {}\nhidden = {}\nlayers = {}\ndropout = {}\nwindow = {}\ncarry_state = {}\nparameters = {}\n",
        s.cell.name(),
        s.vocab_size,
        s.emb_dim,
        s.hidden,
        s.layers,
        s.dropout,
        s.window,
        s.carry_state,
        net.params.parameter_count()
    );
    for (name, t) in net.params.tensors() {
        out.push_str(&format!("tensor.{name} = {}\n", t.len()));
    }
    out
}

/// Writes the checkpoint and its manifest; returns the checkpoint digest.
pub fn save(net: &LstmNetwork, path: &Path) -> Result<String> {
    let bytes = to_bytes(net);
    let digest = sha256_hex(&bytes);
    std::fs::write(path, &bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    let m = manifest_path(path);
    std::fs::write(&m, manifest(net, &digest))
        .map_err(|e| Error::io(format!("writing {}", m.display()), e))?;
    Ok(digest)
}

/// Loads a checkpoint. When a manifest sits next to it, its digest must match.
pub fn load(path: &Path) -> Result<LstmNetwork> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let m = manifest_path(path);
    if m.exists() {
        let kv = crate::kv::read(&m)?;
        let digest = sha256_hex(&bytes);
        match kv.get("sha256") {
            Some(d) if *d == digest => {}
            _ => return Err(Error::format(path, "checksum does not match manifest")),
        }
    }
    from_bytes(&bytes, path)
}

pub fn is_checkpoint(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(cell: CellKind) -> NetworkShape {
        NetworkShape {
            vocab_size: 7,
            emb_dim: 3,
            hidden: 4,
            layers: 2,
            cell,
            dropout: 0.25,
            window: 6,
            carry_state: true,
        }
    }

    #[test]
    fn round_trip() {
        for cell in [CellKind::Lstm, CellKind::Rnn] {
            let net = LstmNetwork::new(shape(cell), 3).unwrap();
            let back = from_bytes(&to_bytes(&net), Path::new("x")).unwrap();
            assert_eq!(back, net);
        }
    }

    #[test]
    fn rejects_damage() {
        let net = LstmNetwork::new(shape(CellKind::Lstm), 3).unwrap();
        let bytes = to_bytes(&net);
        assert!(from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(from_bytes(b"NACT1", Path::new("x")).is_err());
        let dir = std::env::temp_dir().join(format!("ckpt-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("m.ckpt");
        save(&net, &p).unwrap();
        assert_eq!(load(&p).unwrap(), net);
        let mut tampered = bytes.clone();
        let n = tampered.len();
        tampered[n - 3] ^= 1;
        std::fs::write(&p, &tampered).unwrap();
        assert!(load(&p).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
