//! Checkpoint serialization: parameters, batch-norm buffers, and optimizer
//! state in a versioned little-endian binary format.
//!
//! Layout (all integers little-endian, strings as `u32` length + UTF-8):
//!
//! ```text
//! magic   8 × u8   "ARMCKPT\x01"
//! version u32      currently 1
//! dtype   u8       0 = f32, 1 = f64
//! epoch   u64
//! method  string
//! params  u32 count, then per parameter:
//!         name string, partition u8, rank u32, dims u64 × rank, data
//! buffers u32 count, then per layer:
//!         name string, channels u64, mean data, var data
//! opt     u8 tag (0 none, 1 Adam, 2 SGD), then state tensors in
//!         parameter order (shapes implied by the parameter table)
//! ```
//!
//! Loads are strict: wrong magic, wrong dtype, short reads, and trailing
//! bytes are all reported as format errors with the byte offset.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use crate::error::{Error, Result};
use crate::nn::optim::{AdamState, OptState, SgdState};
use crate::nn::{BnBuffers, BnStats, ParamSet, Partition};
use crate::tensor::{Dtype, Scalar, Tensor};

const MAGIC: &[u8; 8] = b"ARMCKPT\x01";
const VERSION: u32 = 1;

/// Everything needed to resume or evaluate a training run.
#[derive(Debug, Clone)]
pub struct Checkpoint<F: Scalar> {
    pub epoch: u64,
    pub method: String,
    pub params: ParamSet<F>,
    pub buffers: BnBuffers<F>,
    pub opt: Option<OptState<F>>,
}

// ── Writing ─────────────────────────────────────────────────────────────

pub fn save<F: Scalar>(path: &Path, ck: &Checkpoint<F>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    write_all(&mut w, ck).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_all<F: Scalar, W: Write>(w: &mut W, ck: &Checkpoint<F>) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(dtype_tag(F::DTYPE))?;
    w.write_u64::<LittleEndian>(ck.epoch)?;
    write_string(w, &ck.method)?;

    w.write_u32::<LittleEndian>(ck.params.len() as u32)?;
    for e in ck.params.entries() {
        write_string(w, &e.name)?;
        w.write_u8(match e.partition {
            Partition::Prediction => 0,
            Partition::Adaptation => 1,
        })?;
        w.write_u32::<LittleEndian>(e.tensor.rank() as u32)?;
        for &d in e.tensor.shape() {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        write_data(w, e.tensor.data())?;
    }

    w.write_u32::<LittleEndian>(ck.buffers.names().len() as u32)?;
    for name in ck.buffers.names() {
        let stats = ck.buffers.get(name).expect("buffer names are its own keys");
        write_string(w, name)?;
        w.write_u64::<LittleEndian>(stats.mean.numel() as u64)?;
        write_data(w, stats.mean.data())?;
        write_data(w, stats.var.data())?;
    }

    match &ck.opt {
        None => w.write_u8(0)?,
        Some(OptState::Adam(st)) => {
            w.write_u8(1)?;
            w.write_u64::<LittleEndian>(st.t)?;
            for t in st.m.iter().chain(st.v.iter()) {
                write_data(w, t.data())?;
            }
        }
        Some(OptState::Sgd(st)) => {
            w.write_u8(2)?;
            for t in &st.velocity {
                write_data(w, t.data())?;
            }
        }
    }
    w.flush()
}

fn dtype_tag(d: Dtype) -> u8 {
    match d {
        Dtype::F32 => 0,
        Dtype::F64 => 1,
    }
}

fn write_string<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

// f32 ↔ f64 conversion is exact for every finite value, so routing both
// dtypes through f64 here preserves checkpoints bit for bit.
fn write_data<F: Scalar, W: Write>(w: &mut W, data: &[F]) -> std::io::Result<()> {
    match F::DTYPE {
        Dtype::F32 => {
            for &v in data {
                w.write_f32::<LittleEndian>(v.as_f64() as f32)?;
            }
        }
        Dtype::F64 => {
            for &v in data {
                w.write_f64::<LittleEndian>(v.as_f64())?;
            }
        }
    }
    Ok(())
}

// ── Reading ─────────────────────────────────────────────────────────────

pub fn load<F: Scalar>(path: &Path) -> Result<Checkpoint<F>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        pos: 0,
        path: path.display().to_string(),
    };
    let ck = read_all(&mut r)?;
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe).map_err(|e| Error::io(r.path.clone(), e))? != 0 {
        return Err(r.fail("trailing bytes after checkpoint payload"));
    }
    Ok(ck)
}

fn read_all<F: Scalar>(r: &mut Reader) -> Result<Checkpoint<F>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format {
            path: r.path.clone(),
            offset: 0,
            detail: "bad magic; not a checkpoint file".to_string(),
        });
    }
    let version = r.read_u32()?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported checkpoint version {version}")));
    }
    let dtype = r.read_u8()?;
    if dtype != dtype_tag(F::DTYPE) {
        return Err(r.fail(format!(
            "dtype tag {dtype} does not match requested {:?}",
            F::DTYPE
        )));
    }
    let epoch = r.read_u64()?;
    let method = r.read_string()?;

    let n_params = r.read_u32()? as usize;
    if n_params > 1_000_000 {
        return Err(r.fail(format!("implausible parameter count {n_params}")));
    }
    let mut params = ParamSet::new();
    let mut shapes = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.read_string()?;
        let partition = match r.read_u8()? {
            0 => Partition::Prediction,
            1 => Partition::Adaptation,
            tag => return Err(r.fail(format!("unknown partition tag {tag}"))),
        };
        let rank = r.read_u32()? as usize;
        if rank > 8 {
            return Err(r.fail(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > 256 << 20 {
            return Err(r.fail(format!("implausible tensor size {numel}")));
        }
        let data = r.read_data::<F>(numel)?;
        let tensor = Tensor::from_vec(&shape, data).map_err(|e| r.fail(e.to_string()))?;
        shapes.push(shape);
        params
            .insert(name.clone(), partition, tensor)
            .map_err(|_| r.fail(format!("duplicate parameter `{name}`")))?;
    }

    let n_buffers = r.read_u32()? as usize;
    if n_buffers > 100_000 {
        return Err(r.fail(format!("implausible buffer count {n_buffers}")));
    }
    let mut buffers = BnBuffers::new();
    for _ in 0..n_buffers {
        let name = r.read_string()?;
        let c = r.read_u64()? as usize;
        if c > 1 << 20 {
            return Err(r.fail(format!("implausible channel count {c}")));
        }
        let mean = Tensor::from_vec(&[c], r.read_data::<F>(c)?).expect("shape matches len");
        let var = Tensor::from_vec(&[c], r.read_data::<F>(c)?).expect("shape matches len");
        buffers.insert(name, BnStats { mean, var });
    }

    let read_aligned = |r: &mut Reader| -> Result<Vec<Tensor<F>>> {
        shapes
            .iter()
            .map(|s| {
                let numel = s.iter().product();
                Ok(Tensor::from_vec(s, r.read_data::<F>(numel)?).expect("shape matches len"))
            })
            .collect()
    };
    let opt = match r.read_u8()? {
        0 => None,
        1 => {
            let t = r.read_u64()?;
            let m = read_aligned(r)?;
            let v = read_aligned(r)?;
            Some(OptState::Adam(AdamState { t, m, v }))
        }
        2 => Some(OptState::Sgd(SgdState {
            velocity: read_aligned(r)?,
        })),
        tag => return Err(r.fail(format!("unknown optimizer tag {tag}"))),
    };

    Ok(Checkpoint {
        epoch,
        method,
        params,
        buffers,
        opt,
    })
}

/// Byte-counting reader so format errors carry exact offsets.
struct Reader {
    inner: BufReader<File>,
    pos: u64,
    path: String,
}

impl Reader {
    fn fail(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset: self.pos,
            detail: detail.into(),
        }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|_| self.fail("unexpected end of file"))?;
        self.pos += buf.len() as u64;
        Ok(())
    }

    fn read_u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b)?;
        Ok(b[0])
    }

    fn read_u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn read_string(&mut self) -> Result<String> {
        let len = self.read_u32()? as usize;
        if len > 4096 {
            return Err(self.fail(format!("implausible string length {len}")));
        }
        let mut buf = vec![0u8; len];
        self.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| self.fail("string is not valid UTF-8"))
    }

    fn read_data<F: Scalar>(&mut self, numel: usize) -> Result<Vec<F>> {
        let mut out = Vec::with_capacity(numel);
        match F::DTYPE {
            Dtype::F32 => {
                let mut buf = vec![0u8; numel * 4];
                self.read_exact(&mut buf)?;
                for chunk in buf.chunks_exact(4) {
                    let bits = u32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
                    out.push(F::from_f64(f32::from_bits(bits) as f64));
                }
            }
            Dtype::F64 => {
                let mut buf = vec![0u8; numel * 8];
                self.read_exact(&mut buf)?;
                for chunk in buf.chunks_exact(8) {
                    let bits = u64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
                    out.push(F::from_f64(f64::from_bits(bits)));
                }
            }
        }
        Ok(out)
    }
}
