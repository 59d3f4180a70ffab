//! Binary container shared by ensembles, datasets and checkpoints: an 8-byte
//! magic, a little-endian u32 format version, a u64 header length, a JSON
//! header, then a flat run of little-endian f64 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CLIMSUR\0";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<H> {
    kind: String,
    n_values: u64,
    header: H,
}

pub fn write_container<H: Serialize>(path: &Path, kind: &str, header: &H, values: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_container_to(&mut out, kind, header, values).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_container_to<W: Write, H: Serialize>(out: &mut W, kind: &str, header: &H, values: &[f64]) -> std::io::Result<()> {
    let envelope = Envelope {
        kind: kind.to_string(),
        n_values: values.len() as u64,
        header,
    };
    let json = serde_json::to_vec(&envelope).map_err(std::io::Error::other)?;
    out.write_all(MAGIC)?;
    out.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Open container with the header parsed and the payload left on disk.
pub struct ContainerReader<H> {
    pub header: H,
    pub n_values: u64,
    payload_offset: u64,
    file: BufReader<File>,
    path: std::path::PathBuf,
}

impl<H: DeserializeOwned> ContainerReader<H> {
    pub fn open(path: &Path, kind: &str) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut file = BufReader::new(file);
        let mut magic = [0u8; 8];
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        file.read_exact(&mut magic)
            .map_err(|_| Error::format(path, "truncated before magic"))?;
        if &magic != MAGIC {
            return Err(Error::format(path, "not a container file"));
        }
        file.read_exact(&mut u32buf)
            .map_err(|_| Error::format(path, "truncated version"))?;
        let version = u32::from_le_bytes(u32buf);
        if version != CONTAINER_VERSION {
            return Err(Error::format(path, format!("unsupported container version {version}")));
        }
        file.read_exact(&mut u64buf)
            .map_err(|_| Error::format(path, "truncated header length"))?;
        let header_len = u64::from_le_bytes(u64buf);
        let mut json = vec![0u8; header_len as usize];
        file.read_exact(&mut json)
            .map_err(|_| Error::format(path, "truncated header"))?;
        let envelope: Envelope<H> = serde_json::from_slice(&json)
            .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
        if envelope.kind != kind {
            return Err(Error::format(
                path,
                format!("expected a {kind} file, found {}", envelope.kind),
            ));
        }
        let payload_offset = 8 + 4 + 8 + header_len;
        let len = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
        if len != payload_offset + 8 * envelope.n_values {
            return Err(Error::format(path, "payload length does not match header"));
        }
        Ok(ContainerReader {
            header: envelope.header,
            n_values: envelope.n_values,
            payload_offset,
            file,
            path: path.to_path_buf(),
        })
    }

    /// Reads `out.len()` values starting at value index `start`.
    pub fn read_values(&mut self, start: u64, out: &mut [f64]) -> Result<()> {
        if start + out.len() as u64 > self.n_values {
            return Err(Error::InvalidInput(format!(
                "read past end of {}",
                self.path.display()
            )));
        }
        self.file
            .seek(SeekFrom::Start(self.payload_offset + 8 * start))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut buf = [0u8; 8];
        for v in out.iter_mut() {
            self.file
                .read_exact(&mut buf)
                .map_err(|e| Error::io(&self.path, e))?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(())
    }

    pub fn read_all(mut self) -> Result<(H, Vec<f64>)> {
        let mut values = vec![0.0; self.n_values as usize];
        self.read_values(0, &mut values)?;
        Ok((self.header, values))
    }
}

pub fn read_container<H: DeserializeOwned>(path: &Path, kind: &str) -> Result<(H, Vec<f64>)> {
    ContainerReader::open(path, kind)?.read_all()
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(hasher.finalize()))
}

/// Writes `text` to `path` unless it exists and `force` is off.
pub fn write_new(path: &Path, bytes: &[u8], force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::InvalidInput(format!(
            "{} exists; pass the force flag to overwrite",
            path.display()
        )));
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Header {
        rows: usize,
        note: String,
    }

    #[test]
    fn round_trip_and_random_access() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let values: Vec<f64> = (0..100).map(|i| (i as f64).sqrt() - 3.3).collect();
        let header = Header {
            rows: 10,
            note: "t".into(),
        };
        write_container(&path, "toy", &header, &values).unwrap();
        let mut reader = ContainerReader::<Header>::open(&path, "toy").unwrap();
        assert_eq!(reader.header, header);
        let mut part = [0.0; 5];
        reader.read_values(40, &mut part).unwrap();
        assert_eq!(part, values[40..45]);
        let (_, all) = read_container::<Header>(&path, "toy").unwrap();
        assert_eq!(all, values);
        assert!(ContainerReader::<Header>::open(&path, "other").is_err());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        write_container(&path, "toy", &Header { rows: 1, note: String::new() }, &[1.0, 2.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            ContainerReader::<Header>::open(&path, "toy"),
            Err(Error::Format { .. })
        ));
    }
}
