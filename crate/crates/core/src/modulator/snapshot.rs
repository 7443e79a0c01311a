//! Snapshot layout: magic `RACC`, a length-prefixed JSON config record,
//! widths `d_hyper`, `d_base`, `m` as `u32`, then raw `f64` parameters in
//! declaration order (prompt bank, DCSE block, RGCA blocks, MLPs).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::modulator::pipeline::{Racc, RaccConfig};

const MAGIC: &[u8; 4] = b"RACC";

impl Racc {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        let cfg = serde_json::to_vec(self.config())?;
        w.write_u32::<LittleEndian>(cfg.len() as u32)?;
        w.write_all(&cfg)?;
        let (dh, db, m) = self.dims();
        for v in [dh, db, m] {
            w.write_u32::<LittleEndian>(v as u32)?;
        }
        self.params().write_raw(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format {
                what: "RACC snapshot",
                detail: format!("bad magic {magic:?}"),
            });
        }
        let n = r.read_u32::<LittleEndian>()? as usize;
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf)?;
        let config: RaccConfig = serde_json::from_slice(&buf)?;
        let dh = r.read_u32::<LittleEndian>()? as usize;
        let db = r.read_u32::<LittleEndian>()? as usize;
        let m = r.read_u32::<LittleEndian>()? as usize;
        let mut racc = Racc::with_dims(config, dh, db, m)?;
        racc.params_mut().read_raw(r)?;
        Ok(racc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
