//! Binary tensor container, band export and run manifests.
//!
//! Tensor file layout (all integers little-endian):
//!
//! | bytes | content                               |
//! |-------|---------------------------------------|
//! | 4     | magic `HT3\0`                         |
//! | 2     | format version, currently 1           |
//! | 2     | dtype: 1 = f32, 2 = f64               |
//! | 12    | `h`, `w`, `b` as u32                  |
//! | rest  | `h * w * b` values, frontal-slice-major (`(k * h + i) * w + j`) |

use std::fs;
use std::path::{Path, PathBuf};

use crate::admm::{AdamConfig, SolverConfig};
use crate::error::{Error, Result};
use crate::kv::{join_list, KvMap};
use crate::model::{Activation, H2tfParams, ModelConfig};
use crate::tensor::{Matrix, Tensor3};

pub const MAGIC: [u8; 4] = *b"HT3\0";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

impl Dtype {
    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn from_code(code: u16) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(Error::Format {
                field: "dtype",
                detail: format!("unknown code {other}"),
            }),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(Error::Parse(format!("unknown dtype '{other}'"))),
        }
    }
}

/// Serializes a tensor. Writing as [`Dtype::F32`] rounds every value.
pub fn encode_tensor(t: &Tensor3, dtype: Dtype) -> Vec<u8> {
    let (h, w, b) = t.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + t.len() * dtype.size());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dtype.code().to_le_bytes());
    for d in [h, w, b] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match dtype {
        Dtype::F32 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

/// Parses a tensor file image; f32 payloads are widened to f64.
pub fn decode_tensor(bytes: &[u8]) -> Result<(Tensor3, Dtype)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::Format {
            field: "magic",
            detail: format!("{:?}", &bytes[0..4]),
        });
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let version = u16_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            field: "version",
            detail: format!("unsupported version {version}"),
        });
    }
    let dtype = Dtype::from_code(u16_at(6))?;
    let (h, w, b) = (u32_at(8), u32_at(12), u32_at(16));
    if h == 0 || w == 0 || b == 0 {
        return Err(Error::Format {
            field: "dims",
            detail: format!("zero dimension in {h}x{w}x{b}"),
        });
    }
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(b))
        .ok_or_else(|| Error::Format {
            field: "dims",
            detail: format!("{h}x{w}x{b} overflows"),
        })?;
    let payload = &bytes[HEADER_LEN..];
    let expected = n * dtype.size();
    if payload.len() != expected {
        return Err(Error::Length {
            expected,
            found: payload.len(),
        });
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok((Tensor3::from_vec((h, w, b), data)?, dtype))
}

pub fn write_tensor(path: &Path, t: &Tensor3, dtype: Dtype) -> Result<()> {
    fs::write(path, encode_tensor(t, dtype))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor3> {
    Ok(read_tensor_with_dtype(path)?.0)
}

pub fn read_tensor_with_dtype(path: &Path) -> Result<(Tensor3, Dtype)> {
    decode_tensor(&fs::read(path)?)
}

/// Path of the sidecar holding the scaling of an exported band.
pub fn band_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// Writes band `k` as an 8-bit binary PGM with rows along `i` and columns along
/// `j`, linearly mapping the band's min and max to 0 and 255. A constant band
/// becomes uniform gray 128. The bounds go to a one-line sidecar
/// (`<path>.txt`, `min=<v> max=<v>`). Returns `(min, max)`.
pub fn export_band(x: &Tensor3, k: usize, path: &Path) -> Result<(f64, f64)> {
    let (h, w, b) = x.dims();
    if k >= b {
        return Err(Error::Range(format!("band {k} of {b}")));
    }
    let band = x.slice_data(k);
    if band.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("band {k} has non-finite values")));
    }
    let lo = band.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = band.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pixels: Vec<u8> = if hi > lo {
        band.iter()
            .map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
            .collect()
    } else {
        vec![128; band.len()]
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    fs::write(path, out)?;
    fs::write(band_sidecar(path), format!("min={lo} max={hi}\n"))?;
    Ok((lo, hi))
}

/// Reads an 8-bit binary PGM written by [`export_band`]: `(h, w, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let bad = |d: &str| Error::Format {
        field: "pgm header",
        detail: d.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("header ends early"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad(&format!("unsupported header {fields:?}")));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad size '{s}'")));
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let pixels = bytes.get(pos..).unwrap_or(&[]).to_vec();
    if pixels.len() != w * h {
        return Err(Error::Length {
            expected: w * h,
            found: pixels.len(),
        });
    }
    Ok((h, w, pixels))
}

pub fn model_config_to_kv(cfg: &ModelConfig) -> KvMap {
    let mut kv = KvMap::new();
    let (h, w, b) = cfg.shape;
    kv.insert("model.shape", join_list(&[h, w, b]));
    kv.insert("model.ranks", join_list(&cfg.ranks));
    kv.insert("model.hnt_layers", cfg.hnt_layers);
    kv.insert("model.activation", cfg.activation.kind);
    kv.insert("model.slope", cfg.activation.slope);
    kv.insert("model.init", cfg.init);
    kv.insert("model.seed", cfg.seed);
    kv
}

pub fn model_config_from_kv(kv: &KvMap) -> Result<ModelConfig> {
    let shape: Vec<usize> = kv.parse_list("model.shape")?;
    if shape.len() != 3 {
        return Err(Error::Parse(format!("model.shape needs 3 values, got {shape:?}")));
    }
    let cfg = ModelConfig {
        shape: (shape[0], shape[1], shape[2]),
        ranks: kv.parse_list("model.ranks")?,
        hnt_layers: kv.parse("model.hnt_layers")?,
        activation: Activation {
            kind: kv.parse("model.activation")?,
            slope: kv.parse("model.slope")?,
        },
        init: kv.parse("model.init")?,
        seed: kv.parse("model.seed")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn solver_config_to_kv(cfg: &SolverConfig) -> KvMap {
    let mut kv = KvMap::new();
    kv.insert("solver.alpha1", cfg.alpha1);
    kv.insert("solver.alpha2", cfg.alpha2);
    kv.insert("solver.alpha3", cfg.alpha3);
    kv.insert("solver.mu", cfg.mu);
    kv.insert("solver.lr", cfg.adam.lr);
    kv.insert("solver.beta1", cfg.adam.beta1);
    kv.insert("solver.beta2", cfg.adam.beta2);
    kv.insert("solver.eps", cfg.adam.eps);
    kv.insert("solver.max_iters", cfg.max_iters);
    kv.insert("solver.tol", cfg.tol);
    kv.insert("solver.inner_adam_steps", cfg.inner_adam_steps);
    kv.insert("solver.rescale", cfg.rescale);
    kv
}

pub fn solver_config_from_kv(kv: &KvMap) -> Result<SolverConfig> {
    let cfg = SolverConfig {
        alpha1: kv.parse("solver.alpha1")?,
        alpha2: kv.parse("solver.alpha2")?,
        alpha3: kv.parse("solver.alpha3")?,
        mu: kv.parse("solver.mu")?,
        adam: AdamConfig {
            lr: kv.parse("solver.lr")?,
            beta1: kv.parse("solver.beta1")?,
            beta2: kv.parse("solver.beta2")?,
            eps: kv.parse("solver.eps")?,
        },
        max_iters: kv.parse("solver.max_iters")?,
        tol: kv.parse("solver.tol")?,
        inner_adam_steps: kv.parse("solver.inner_adam_steps")?,
        rescale: kv.parse("solver.rescale")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

const CHECKPOINT_MANIFEST: &str = "checkpoint.txt";

/// Saves the parameters into `dir`: one tensor file per factor, one per
/// transform (stored as `b x b x 1`) and a manifest with the model config.
pub fn write_checkpoint(dir: &Path, params: &H2tfParams, cfg: &ModelConfig) -> Result<()> {
    params.validate()?;
    fs::create_dir_all(dir)?;
    for (d, f) in params.factors.iter().enumerate() {
        write_tensor(&dir.join(format!("factor_{}.ht3", d + 1)), f, Dtype::F64)?;
    }
    for (p, t) in params.transforms.iter().enumerate() {
        let (r, c) = t.dims();
        let as_tensor = Tensor3::from_vec((r, c, 1), t.data().to_vec())?;
        write_tensor(&dir.join(format!("transform_{}.ht3", p + 1)), &as_tensor, Dtype::F64)?;
    }
    let mut kv = model_config_to_kv(cfg);
    kv.insert("checkpoint.factors", params.factors.len());
    kv.insert("checkpoint.transforms", params.transforms.len());
    kv.insert("checkpoint.transforms_learnable", params.transforms_learnable);
    kv.write(&dir.join(CHECKPOINT_MANIFEST))
}

/// Loads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(dir: &Path) -> Result<(H2tfParams, ModelConfig)> {
    let kv = KvMap::read(&dir.join(CHECKPOINT_MANIFEST))?;
    let cfg = model_config_from_kv(&kv)?;
    let nf: usize = kv.parse("checkpoint.factors")?;
    let nt: usize = kv.parse("checkpoint.transforms")?;
    let factors = (1..=nf)
        .map(|d| read_tensor(&dir.join(format!("factor_{d}.ht3"))))
        .collect::<Result<Vec<_>>>()?;
    let transforms = (1..=nt)
        .map(|p| {
            let t = read_tensor(&dir.join(format!("transform_{p}.ht3")))?;
            let (r, c, _) = t.dims();
            Matrix::from_vec(r, c, t.into_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    let params = H2tfParams {
        factors,
        transforms,
        transforms_learnable: kv.parse("checkpoint.transforms_learnable")?,
        activation: cfg.activation,
        shape: cfg.shape,
    };
    params.validate()?;
    Ok((params, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::testutil::random_tensor;

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let t = random_tensor(3, 4, 5, 1);
        let (back, dtype) = decode_tensor(&encode_tensor(&t, Dtype::F64)).unwrap();
        assert_eq!(dtype, Dtype::F64);
        assert_eq!(back, t);
    }

    #[test]
    fn f32_round_trip_within_precision() {
        let t = random_tensor(3, 4, 5, 2);
        let (back, _) = decode_tensor(&encode_tensor(&t, Dtype::F32)).unwrap();
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn header_layout() {
        let t = Tensor3::from_fn(2, 2, 2, |i, j, k| (k * 4 + i * 2 + j) as f64);
        let bytes = encode_tensor(&t, Dtype::F64);
        assert_eq!(&bytes[0..4], b"HT3\0");
        assert_eq!(bytes[4..6], [1, 0]);
        assert_eq!(bytes[6..8], [2, 0]);
        assert_eq!(bytes[8..12], [2, 0, 0, 0]);
        assert_eq!(bytes.len() - HEADER_LEN, 64);
        // Third stored value is (i=1, j=0, k=0).
        assert_eq!(f64::from_le_bytes(bytes[36..44].try_into().unwrap()), 2.0);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let t = Tensor3::ones(2, 2, 2);
        let good = encode_tensor(&t, Dtype::F64);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tensor(&bad), Err(Error::Format { field: "magic", .. })));

        let mut bad = good.clone();
        bad[6] = 7;
        assert!(matches!(decode_tensor(&bad), Err(Error::Format { field: "dtype", .. })));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(decode_tensor(&bad), Err(Error::Format { field: "version", .. })));

        let mut bad = good.clone();
        bad[16..20].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_tensor(&bad), Err(Error::Format { field: "dims", .. })));

        assert!(matches!(
            decode_tensor(&good[..good.len() - 1]),
            Err(Error::Length { expected: 64, found: 63 })
        ));
        assert!(matches!(decode_tensor(&good[..10]), Err(Error::Length { .. })));
    }

    #[test]
    fn band_export_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor3::from_fn(2, 3, 2, |i, j, k| if k == 0 { (i * 3 + j) as f64 } else { 4.0 });
        let p = dir.path().join("b0.pgm");
        assert_eq!(export_band(&t, 0, &p).unwrap(), (0.0, 5.0));
        let (h, w, px) = read_pgm(&p).unwrap();
        assert_eq!((h, w), (2, 3));
        assert_eq!(px, vec![0, 51, 102, 153, 204, 255]);
        let side = fs::read_to_string(band_sidecar(&p)).unwrap();
        assert_eq!(side.trim(), "min=0 max=5");

        let p = dir.path().join("b1.pgm");
        export_band(&t, 1, &p).unwrap();
        assert!(read_pgm(&p).unwrap().2.iter().all(|&v| v == 128));
        assert!(matches!(export_band(&t, 2, &p), Err(Error::Range(_))));
    }

    #[test]
    fn config_manifests_round_trip() {
        let mut m = ModelConfig::new(40, 30, 6);
        m.seed = 17;
        let back = model_config_from_kv(&model_config_to_kv(&m).to_string().parse().unwrap()).unwrap();
        assert_eq!(back, m);
        let s = SolverConfig {
            alpha1: 0.25,
            max_iters: 12,
            ..SolverConfig::default()
        };
        let back = solver_config_from_kv(&solver_config_to_kv(&s).to_string().parse().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::with_rank_base(6, 5, 4, 3, 2);
        let params = init_params(&cfg).unwrap();
        write_checkpoint(dir.path(), &params, &cfg).unwrap();
        let (p, c) = read_checkpoint(dir.path()).unwrap();
        assert_eq!(p, params);
        assert_eq!(c, cfg);
    }
}
