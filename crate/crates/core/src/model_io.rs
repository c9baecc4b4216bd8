//! Binary model container. Little-endian, versioned, bit-exact round trip
//! (floats are stored as raw IEEE bits so determinism checks can compare
//! files byte for byte).

use std::fs;
use std::io;
use std::path::Path;

use crate::attrlearn::{AttrError, AttrMode, AttrModel, AttributeBases, ColMat, Scheme};
use crate::dataset::Region;
use crate::featmap::LiftConfig;
use crate::linsvm::LinearModel;

const MAGIC: &[u8; 8] = b"CELLATTR";
const VERSION: u32 = 1;

pub fn save_model(model: &AttrModel, path: impl AsRef<Path>) -> Result<(), AttrError> {
    let bytes = model_to_bytes(model);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AttrModel, AttrError> {
    let bytes = fs::read(path)?;
    model_from_bytes(&bytes)
}

pub fn model_to_bytes(model: &AttrModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    out.push(match model.scheme {
        Scheme::Arcad => 0,
        Scheme::Crad => 1,
    });
    out.push(match model.mode {
        AttrMode::RealValued => 0,
        AttrMode::Binarized => 1,
    });
    put_u32(&mut out, model.num_classes as u32);
    put_u32(&mut out, model.d as u32);
    put_u32(&mut out, model.lift.n as u32);
    put_f64(&mut out, model.lift.sample_period);
    put_f64(&mut out, model.lambda);
    put_u64(&mut out, model.seed);
    put_u32(&mut out, model.bases.attrs_per_region as u32);
    put_u32(&mut out, model.bases.lifted_dim as u32);
    for j in Region::ALL {
        let m = model.bases.mat(j);
        put_u32(&mut out, m.rows as u32);
        put_u32(&mut out, m.cols as u32);
        for &v in m.data() {
            put_f64(&mut out, v);
        }
    }
    put_u32(&mut out, model.svms.len() as u32);
    for svm in &model.svms {
        put_u32(&mut out, svm.w.len() as u32);
        for &v in &svm.w {
            put_f64(&mut out, v);
        }
        put_f64(&mut out, svm.b);
    }
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<AttrModel, AttrError> {
    let mut r = Cursor { bytes, pos: 0 };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AttrError::BadModel("wrong magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(AttrError::BadModel(format!("unsupported version {version}")));
    }
    let scheme = match r.u8()? {
        0 => Scheme::Arcad,
        1 => Scheme::Crad,
        v => return Err(AttrError::BadModel(format!("bad scheme byte {v}"))),
    };
    let mode = match r.u8()? {
        0 => AttrMode::RealValued,
        1 => AttrMode::Binarized,
        v => return Err(AttrError::BadModel(format!("bad mode byte {v}"))),
    };
    let num_classes = r.u32()? as usize;
    let d = r.u32()? as usize;
    let n = r.u32()? as usize;
    let sample_period = r.f64()?;
    let lambda = r.f64()?;
    let seed = r.u64()?;
    let attrs_per_region = r.u32()? as usize;
    let lifted_dim = r.u32()? as usize;
    let mut mats = Vec::with_capacity(Region::COUNT);
    for _ in 0..Region::COUNT {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if rows != lifted_dim || cols != attrs_per_region {
            return Err(AttrError::BadModel("basis shape mismatch".into()));
        }
        let mut m = ColMat::zeros(rows, cols);
        for c in 0..cols {
            for i in 0..rows {
                m.col_mut(c)[i] = r.f64()?;
            }
        }
        mats.push(m);
    }
    let bases = AttributeBases::from_parts(lifted_dim, attrs_per_region, seed, mats)
        .map_err(AttrError::BadModel)?;
    let k = r.u32()? as usize;
    if k != num_classes {
        return Err(AttrError::BadModel("svm count mismatch".into()));
    }
    let mut svms = Vec::with_capacity(k);
    for _ in 0..k {
        let dim = r.u32()? as usize;
        let mut w = Vec::with_capacity(dim);
        for _ in 0..dim {
            w.push(r.f64()?);
        }
        let b = r.f64()?;
        svms.push(LinearModel { w, b });
    }
    if r.pos != bytes.len() {
        return Err(AttrError::BadModel("trailing bytes".into()));
    }
    Ok(AttrModel {
        bases,
        svms,
        mode,
        scheme,
        lift: LiftConfig { n, sample_period },
        lambda,
        seed,
        num_classes,
        d,
    })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_bits().to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn read_exact(&mut self, buf: &mut [u8]) -> io::Result<()> {
        if self.pos + buf.len() > self.bytes.len() {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "model file truncated"));
        }
        buf.copy_from_slice(&self.bytes[self.pos..self.pos + buf.len()]);
        self.pos += buf.len();
        Ok(())
    }

    fn u8(&mut self) -> io::Result<u8> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> io::Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> io::Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
}
