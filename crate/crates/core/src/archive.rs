//! Binary formats: feature archives and the model container.
//!
//! Feature archive (all little-endian):
//! `b"SPDF"`, version `u32`, feature kind `u32`, `T u32`, `D u32`, then
//! `T * D` `f32` values row-major.
//!
//! Model container:
//! `b"SPDM"`, version `u32`, model kind `u32`, config length `u32`, config
//! text (UTF-8 TOML), tensor count `u32`, then per tensor: name length
//! `u32`, UTF-8 name, rank `u32`, `rank` dims `u32`, `f32` data.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, EnrollStats, GmmModel, LdaGaussianizer, PldaModel};
pub use crate::backend::GmmPair;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix};
use crate::nnet::{Module, XResNet, XResNetConfig};
use crate::sad::SadModel;

pub const FEATURE_MAGIC: &[u8; 4] = b"SPDF";
pub const FEATURE_VERSION: u32 = 1;
pub const MODEL_MAGIC: &[u8; 4] = b"SPDM";
pub const MODEL_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::CorruptFile(format!("truncated: need {n} bytes at offset {}", self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::CorruptFile("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::CorruptFile(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("value fits in u32").to_le_bytes());
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_features(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * m.values().len());
    out.extend_from_slice(FEATURE_MAGIC);
    put_u32(&mut out, FEATURE_VERSION as usize);
    put_u32(&mut out, m.kind().code() as usize);
    put_u32(&mut out, m.n_frames());
    put_u32(&mut out, m.dim());
    for &v in m.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != FEATURE_MAGIC {
        return Err(Error::UnsupportedFormat("not a feature archive".into()));
    }
    let version = r.u32()?;
    if version != FEATURE_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let code = r.u32()?;
    let kind = FeatureKind::from_code(code).ok_or_else(|| Error::CorruptFile(format!("unknown feature kind {code}")))?;
    let (t, d) = (r.u32()? as usize, r.u32()? as usize);
    let values = r.f32s(t.checked_mul(d).ok_or_else(|| Error::CorruptFile("size overflow".into()))?)?;
    r.finish()?;
    FeatureMatrix::new(values.into_iter().map(f64::from).collect(), t, d, kind)
}

pub fn write_features(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    write_file(path.as_ref(), &encode_features(m))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    decode_features(&read_file(path.as_ref())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    XResNet = 1,
    Sad = 2,
    Lda = 3,
    Plda = 4,
    Gmm = 5,
}

impl ModelKind {
    fn from_code(c: u32) -> Option<Self> {
        Some(match c {
            1 => Self::XResNet,
            2 => Self::Sad,
            3 => Self::Lda,
            4 => Self::Plda,
            5 => Self::Gmm,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub config: String,
    pub tensors: Vec<NamedTensor>,
}

impl ModelFile {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        put_u32(&mut out, MODEL_VERSION as usize);
        put_u32(&mut out, self.kind as usize);
        put_u32(&mut out, self.config.len());
        out.extend_from_slice(self.config.as_bytes());
        put_u32(&mut out, self.tensors.len());
        for t in &self.tensors {
            put_u32(&mut out, t.name.len());
            out.extend_from_slice(t.name.as_bytes());
            put_u32(&mut out, t.dims.len());
            for &d in &t.dims {
                put_u32(&mut out, d);
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::UnsupportedFormat("not a model file".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let code = r.u32()?;
        let kind = ModelKind::from_code(code).ok_or_else(|| Error::CorruptFile(format!("unknown model kind {code}")))?;
        let len = r.u32()? as usize;
        let config = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::CorruptFile("config is not UTF-8".into()))?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::CorruptFile("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::CorruptFile("size overflow".into()))?;
            let data = r.f32s(count)?;
            tensors.push(NamedTensor { name, dims, data });
        }
        r.finish()?;
        Ok(Self { kind, config, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }

    pub fn expect_kind(self, kind: ModelKind) -> Result<Self> {
        if self.kind != kind {
            return Err(Error::UnsupportedFormat(format!("expected a {kind:?} model, found {:?}", self.kind)));
        }
        Ok(self)
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::CorruptFile(format!("missing tensor `{name}`")))
    }

    fn push(&mut self, name: &str, dims: Vec<usize>, data: impl IntoIterator<Item = f64>) {
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            dims,
            data: data.into_iter().map(|v| v as f32).collect(),
        });
    }

    fn push_matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        let (r, c) = m.shape();
        self.push(name, vec![r, c], (0..r).flat_map(|i| (0..c).map(move |j| m[(i, j)])));
    }

    fn push_vector(&mut self, name: &str, v: &DVector<f64>) {
        self.push(name, vec![v.len()], v.iter().copied());
    }

    fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let t = self.tensor(name)?;
        if t.dims.len() != 2 {
            return Err(Error::CorruptFile(format!("`{name}` is not a matrix")));
        }
        Ok(DMatrix::from_row_iterator(t.dims[0], t.dims[1], t.data.iter().map(|&v| v as f64)))
    }

    fn vector(&self, name: &str) -> Result<DVector<f64>> {
        let t = self.tensor(name)?;
        if t.dims.len() != 1 {
            return Err(Error::CorruptFile(format!("`{name}` is not a vector")));
        }
        Ok(DVector::from_iterator(t.dims[0], t.data.iter().map(|&v| v as f64)))
    }

    fn values(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.tensor(name)?.data.iter().map(|&v| v as f64).collect())
    }

    fn config_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        toml::from_str(&self.config).map_err(|e| Error::CorruptFile(format!("model config: {e}")))
    }
}

fn to_toml<T: Serialize>(v: &T) -> String {
    toml::to_string(v).expect("config types serialize to TOML")
}

/// Fills every parameter of `module` from same-named tensors.
fn load_params<M: Module<f32>>(module: &mut M, file: &ModelFile) -> Result<()> {
    let mut err = None;
    module.visit_mut(&mut |p| {
        if err.is_some() {
            return;
        }
        match file.tensor(&p.name) {
            Ok(t) if t.data.len() == p.value.len() && t.dims == p.shape => p.value.copy_from_slice(&t.data),
            Ok(t) => {
                err = Some(Error::CorruptFile(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    p.name, t.dims, p.shape
                )))
            }
            Err(e) => err = Some(e),
        }
    });
    err.map_or(Ok(()), Err)
}

fn param_tensors<M: Module<f32>>(module: &M) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    module.visit(&mut |p| {
        out.push(NamedTensor {
            name: p.name.clone(),
            dims: p.shape.clone(),
            data: p.value.clone(),
        })
    });
    out
}

pub fn xresnet_to_file(model: &XResNet<f32>) -> ModelFile {
    ModelFile {
        kind: ModelKind::XResNet,
        config: to_toml(&model.config),
        tensors: param_tensors(model),
    }
}

pub fn xresnet_from_file(file: &ModelFile) -> Result<XResNet<f32>> {
    let file = file.clone().expect_kind(ModelKind::XResNet)?;
    let cfg: XResNetConfig = file.config_as()?;
    let mut model = XResNet::build(&cfg, 0)?;
    load_params(&mut model, &file)?;
    Ok(model)
}

pub fn sad_to_file(model: &SadModel<f32>) -> ModelFile {
    ModelFile {
        kind: ModelKind::Sad,
        config: String::new(),
        tensors: param_tensors(model),
    }
}

pub fn sad_from_file(file: &ModelFile) -> Result<SadModel<f32>> {
    let file = file.clone().expect_kind(ModelKind::Sad)?;
    let mut model = SadModel::build(0);
    load_params(&mut model, &file)?;
    Ok(model)
}

fn push_lda(file: &mut ModelFile, lda: &LdaGaussianizer) {
    file.push_vector("lda.mean", &lda.mean);
    file.push_matrix("lda.projection", &lda.projection);
    file.push_matrix("lda.whitening", &lda.whitening);
}

fn read_lda(file: &ModelFile) -> Result<LdaGaussianizer> {
    let lda = LdaGaussianizer {
        mean: file.vector("lda.mean")?,
        projection: file.matrix("lda.projection")?,
        whitening: file.matrix("lda.whitening")?,
    };
    let (o, i) = lda.projection.shape();
    if i != lda.mean.len() || lda.whitening.shape() != (o, o) {
        return Err(Error::CorruptFile("inconsistent LDA shapes".into()));
    }
    Ok(lda)
}

pub fn lda_to_file(lda: &LdaGaussianizer) -> ModelFile {
    let mut f = ModelFile {
        kind: ModelKind::Lda,
        config: String::new(),
        tensors: Vec::new(),
    };
    push_lda(&mut f, lda);
    f
}

pub fn lda_from_file(file: &ModelFile) -> Result<LdaGaussianizer> {
    read_lda(&file.clone().expect_kind(ModelKind::Lda)?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackendMeta {
    pristine_count: usize,
    spoof_count: usize,
}

pub fn backend_to_file(b: &Backend) -> ModelFile {
    let mut f = ModelFile {
        kind: ModelKind::Plda,
        config: to_toml(&BackendMeta {
            pristine_count: b.pristine.count,
            spoof_count: b.spoof.count,
        }),
        tensors: Vec::new(),
    };
    push_lda(&mut f, &b.lda);
    f.push_vector("plda.mu", &b.plda.mu);
    f.push_matrix("plda.u", &b.plda.u);
    f.push_matrix("plda.lambda", &b.plda.lambda);
    f.push_vector("enroll.pristine", &b.pristine.mean);
    f.push_vector("enroll.spoof", &b.spoof.mean);
    f
}

pub fn backend_from_file(file: &ModelFile) -> Result<Backend> {
    let file = file.clone().expect_kind(ModelKind::Plda)?;
    let meta: BackendMeta = file.config_as()?;
    let b = Backend {
        lda: read_lda(&file)?,
        plda: PldaModel {
            mu: file.vector("plda.mu")?,
            u: file.matrix("plda.u")?,
            lambda: file.matrix("plda.lambda")?,
        },
        pristine: EnrollStats {
            mean: file.vector("enroll.pristine")?,
            count: meta.pristine_count,
        },
        spoof: EnrollStats {
            mean: file.vector("enroll.spoof")?,
            count: meta.spoof_count,
        },
    };
    let d = b.lda.out_dim();
    if b.plda.mu.len() != d || b.plda.lambda.shape() != (d, d) || b.plda.u.nrows() != d || b.pristine.mean.len() != d || b.spoof.mean.len() != d {
        return Err(Error::CorruptFile("inconsistent PLDA shapes".into()));
    }
    Ok(b)
}

pub fn gmm_to_file(pair: &GmmPair) -> ModelFile {
    let mut f = ModelFile {
        kind: ModelKind::Gmm,
        config: String::new(),
        tensors: Vec::new(),
    };
    for (side, g) in [("spoof", &pair.spoof), ("pristine", &pair.pristine)] {
        let k = g.n_components();
        f.push(&format!("{side}.weights"), vec![k], g.weights.iter().copied());
        f.push(&format!("{side}.means"), vec![k, g.dim], g.means.iter().copied());
        f.push(&format!("{side}.variances"), vec![k, g.dim], g.variances.iter().copied());
    }
    f
}

pub fn gmm_from_file(file: &ModelFile) -> Result<GmmPair> {
    let file = file.clone().expect_kind(ModelKind::Gmm)?;
    let side = |s: &str| -> Result<GmmModel> {
        let means = file.tensor(&format!("{s}.means"))?;
        if means.dims.len() != 2 {
            return Err(Error::CorruptFile("GMM means must be a matrix".into()));
        }
        let g = GmmModel {
            weights: file.values(&format!("{s}.weights"))?,
            means: file.values(&format!("{s}.means"))?,
            variances: file.values(&format!("{s}.variances"))?,
            dim: means.dims[1],
        };
        if g.weights.len() != means.dims[0] || g.variances.len() != g.means.len() {
            return Err(Error::CorruptFile("inconsistent GMM shapes".into()));
        }
        Ok(g)
    };
    Ok(GmmPair {
        spoof: side("spoof")?,
        pristine: side("pristine")?,
    })
}
