//! Binary checkpoint format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic     8 bytes  "HUAPACKP"
//! version   u32      1
//! variant   u8       0=huapa 1=hua 2=hpa 3=no-attention-baseline
//! dims      6 x u32  word, user, product, hidden, attention, classes
//! vocab     3 x u32  n_words, n_users, n_products
//! hashes    3 x u64  word / user / product vocabulary hashes
//! tensors   u32      count, then per tensor:
//!   name    u16 length + utf-8 bytes
//!   ndim    u8, then u32 per dimension
//!   data    f64 per element
//! ```
//!
//! Loading rebuilds the parameter skeleton from the header, then fills every
//! buffer, verifying tensor names, shapes, and the vocabulary hashes. Any
//! mismatch aborts the load.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::VocabHashes;

use super::{HuapaParams, ModelDims, Variant};

const MAGIC: &[u8; 8] = b"HUAPACKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum CkptError {
    Io { path: String, msg: String },
    BadMagic,
    BadVersion { got: u32 },
    VocabHashMismatch { which: &'static str },
    TensorMismatch { expected: String, got: String },
    ShapeMismatch { tensor: String, expected: Vec<usize>, got: Vec<usize> },
    Corrupt { msg: String },
}

impl fmt::Display for CkptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CkptError::Io { path, msg } => write!(f, "{path}: {msg}"),
            CkptError::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            CkptError::BadVersion { got } => write!(f, "unsupported checkpoint version {got}"),
            CkptError::VocabHashMismatch { which } => {
                write!(f, "checkpoint was trained with a different {which} vocabulary")
            }
            CkptError::TensorMismatch { expected, got } => {
                write!(f, "tensor order mismatch: expected {expected}, found {got}")
            }
            CkptError::ShapeMismatch { tensor, expected, got } => {
                write!(f, "tensor {tensor}: shape {got:?} does not match expected {expected:?}")
            }
            CkptError::Corrupt { msg } => write!(f, "corrupt checkpoint: {msg}"),
        }
    }
}

impl std::error::Error for CkptError {}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CkptError + '_ {
    move |e| CkptError::Io { path: path.display().to_string(), msg: e.to_string() }
}

fn variant_code(v: Variant) -> u8 {
    match v {
        Variant::Huapa => 0,
        Variant::Hua => 1,
        Variant::Hpa => 2,
        Variant::MeanPool => 3,
    }
}

fn variant_from(code: u8) -> Result<Variant, CkptError> {
    Ok(match code {
        0 => Variant::Huapa,
        1 => Variant::Hua,
        2 => Variant::Hpa,
        3 => Variant::MeanPool,
        _ => return Err(CkptError::Corrupt { msg: format!("unknown variant code {code}") }),
    })
}

pub fn save(path: &Path, params: &HuapaParams, hashes: &VocabHashes) -> Result<(), CkptError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let werr = io_err(path);

    let tensors = params.all_tensors();
    let d = &params.dims;
    let n_words = params.word_emb.shape()[0];
    let n_users = params.user_emb.as_ref().map_or(1, |e| e.shape()[0]);
    let n_products = params.product_emb.as_ref().map_or(1, |e| e.shape()[0]);

    w.write_all(MAGIC).map_err(&werr)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(&werr)?;
    w.write_all(&[variant_code(params.variant)]).map_err(&werr)?;
    for dim in [d.word_dim, d.user_dim, d.product_dim, d.hidden, d.attention, d.classes] {
        w.write_all(&(dim as u32).to_le_bytes()).map_err(&werr)?;
    }
    for n in [n_words, n_users, n_products] {
        w.write_all(&(n as u32).to_le_bytes()).map_err(&werr)?;
    }
    for h in [hashes.words, hashes.users, hashes.products] {
        w.write_all(&h.to_le_bytes()).map_err(&werr)?;
    }
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(&werr)?;
    for (name, value) in &tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes()).map_err(&werr)?;
        w.write_all(bytes).map_err(&werr)?;
        w.write_all(&[value.shape().len() as u8]).map_err(&werr)?;
        for &dim in value.shape() {
            w.write_all(&(dim as u32).to_le_bytes()).map_err(&werr)?;
        }
        for x in value.data().iter() {
            w.write_all(&x.to_le_bytes()).map_err(&werr)?;
        }
    }
    w.flush().map_err(&werr)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], CkptError> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| CkptError::Corrupt { msg: e.to_string() })?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8, CkptError> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, CkptError> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<u32, CkptError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64, CkptError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64, CkptError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

/// Load a checkpoint and verify it against the vocabulary in use.
pub fn load(path: &Path, expected: &VocabHashes) -> Result<HuapaParams, CkptError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = Reader { inner: BufReader::new(file) };

    if &r.bytes::<8>()? != MAGIC {
        return Err(CkptError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CkptError::BadVersion { got: version });
    }
    let variant = variant_from(r.u8()?)?;
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let dims = ModelDims {
        word_dim: dims[0],
        user_dim: dims[1],
        product_dim: dims[2],
        hidden: dims[3],
        attention: dims[4],
        classes: dims[5],
    };
    let n_words = r.u32()? as usize;
    let n_users = r.u32()? as usize;
    let n_products = r.u32()? as usize;
    let hashes = VocabHashes { words: r.u64()?, users: r.u64()?, products: r.u64()? };
    if hashes.words != expected.words {
        return Err(CkptError::VocabHashMismatch { which: "word" });
    }
    if hashes.users != expected.users {
        return Err(CkptError::VocabHashMismatch { which: "user" });
    }
    if hashes.products != expected.products {
        return Err(CkptError::VocabHashMismatch { which: "product" });
    }

    let params = HuapaParams::init(
        variant,
        dims,
        (n_words, n_users, n_products),
        vec![0.0; n_words * dims.word_dim],
        0,
    );
    let tensors = params.all_tensors();
    let n_tensors = r.u32()? as usize;
    if n_tensors != tensors.len() {
        return Err(CkptError::Corrupt {
            msg: format!("expected {} tensors, found {n_tensors}", tensors.len()),
        });
    }
    for (name, value) in &tensors {
        let len = r.u16()? as usize;
        let mut raw = vec![0u8; len];
        r.inner
            .read_exact(&mut raw)
            .map_err(|e| CkptError::Corrupt { msg: e.to_string() })?;
        let got_name =
            String::from_utf8(raw).map_err(|_| CkptError::Corrupt { msg: "bad tensor name".into() })?;
        if &got_name != name {
            return Err(CkptError::TensorMismatch { expected: name.clone(), got: got_name });
        }
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        if shape != value.shape() {
            return Err(CkptError::ShapeMismatch {
                tensor: name.clone(),
                expected: value.shape().to_vec(),
                got: shape,
            });
        }
        let mut buf = vec![0.0; value.len()];
        for x in &mut buf {
            *x = r.f64()?;
        }
        value.set_data(&buf);
    }
    Ok(params)
}
