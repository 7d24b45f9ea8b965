//! Plain-text model files.
//!
//! ```text
//! LPVSS1
//! format_version = 1
//! variant = lipschitz
//! n_x = 3
//! ...
//! param 0 3 1
//! 0.0123 -0.04 0.1
//! ...
//! crc32 = 1a2b3c4d
//! ```
//!
//! Parameter values are written column-major with the shortest
//! representation that round-trips, so save → load is bit-exact. The
//! trailing CRC-32 covers every byte before the `crc32` line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{CoeffMap, CoeffSpec, Dims, LpvLfrModel, LpvModel, LpvSsModel, MlpMode, Model, ModelError};
use crate::linalg::DenseMatrix;
use crate::ssparam::AlphaParam;

pub const MAGIC: &str = "LPVSS1";
pub const FORMAT_VERSION: u32 = 1;

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::CorruptFile(msg.into())
}

pub fn to_string(model: &Model) -> String {
    let mut s = String::new();
    let dims = model.dims();
    writeln!(s, "{MAGIC}").unwrap();
    writeln!(s, "format_version = {FORMAT_VERSION}").unwrap();
    writeln!(s, "variant = {}", model.variant()).unwrap();
    writeln!(s, "n_x = {}", dims.n_x).unwrap();
    writeln!(s, "n_u = {}", dims.n_u).unwrap();
    writeln!(s, "n_y = {}", dims.n_y).unwrap();
    writeln!(s, "n_p = {}", dims.n_p).unwrap();
    match model {
        Model::Ss(m) => {
            match &m.structure {
                super::SsStructure::Contracting(c) => {
                    writeln!(s, "epsilon = {}", c.epsilon).unwrap();
                    match c.alpha {
                        AlphaParam::Trained(_) => writeln!(s, "alpha_mode = trained").unwrap(),
                        AlphaParam::Fixed(a) => {
                            writeln!(s, "alpha_mode = fixed").unwrap();
                            writeln!(s, "alpha = {a}").unwrap();
                        }
                    }
                }
                super::SsStructure::Lipschitz(l) => {
                    writeln!(s, "epsilon = {}", l.epsilon).unwrap();
                    writeln!(s, "gamma = {}", l.gamma).unwrap();
                }
                super::SsStructure::Affine => {}
            }
            match &m.coeffs {
                CoeffMap::Mlp { mode, .. } => {
                    let mode = match mode {
                        MlpMode::PerComponent => "mlp",
                        MlpMode::Trunk => "mlp_trunk",
                    };
                    writeln!(s, "coeff_map = {mode}").unwrap();
                    let hidden: Vec<String> = m.coeffs.hidden_widths().iter().map(usize::to_string).collect();
                    writeln!(s, "hidden = {}", hidden.join(",")).unwrap();
                }
                CoeffMap::Affine(_) => writeln!(s, "coeff_map = affine").unwrap(),
            }
            writeln!(s, "seed = {}", m.seed).unwrap();
        }
        Model::Lfr(m) => {
            writeln!(s, "n_w = {}", m.n_w).unwrap();
            writeln!(s, "seed = {}", m.seed).unwrap();
        }
    }
    for (i, p) in model.parameters().iter().enumerate() {
        writeln!(s, "param {i} {} {}", p.rows(), p.cols()).unwrap();
        let vals: Vec<String> = p.vec_col_major().iter().map(|v| format!("{v:?}")).collect();
        writeln!(s, "{}", vals.join(" ")).unwrap();
    }
    let crc = crc32fast::hash(s.as_bytes());
    writeln!(s, "crc32 = {crc:08x}").unwrap();
    s
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, to_string(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model, ModelError> {
    let text = std::fs::read_to_string(path)?;
    from_str(&text)
}

pub fn from_str(text: &str) -> Result<Model, ModelError> {
    let body_end = text.rfind("crc32 = ").ok_or_else(|| corrupt("missing checksum line (truncated file?)"))?;
    if body_end > 0 && !text[..body_end].ends_with('\n') {
        return Err(corrupt("checksum line is not on its own line"));
    }
    let (body, tail) = text.split_at(body_end);
    let stored = tail["crc32 = ".len()..].trim();
    let stored = u32::from_str_radix(stored, 16).map_err(|_| corrupt("unreadable checksum"))?;
    let actual = crc32fast::hash(body.as_bytes());
    if stored != actual {
        return Err(corrupt(format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}")));
    }

    let mut lines = body.lines();
    if lines.next() != Some(MAGIC) {
        return Err(corrupt("missing LPVSS1 header"));
    }
    let mut header = BTreeMap::new();
    let mut params = Vec::new();
    while let Some(line) = lines.next() {
        if let Some(rest) = line.strip_prefix("param ") {
            let f: Vec<usize> = rest
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| corrupt(format!("bad param line `{line}`"))))
                .collect::<Result<_, _>>()?;
            if f.len() != 3 || f[0] != params.len() {
                return Err(corrupt(format!("bad param line `{line}`")));
            }
            let vals: Vec<f64> = lines
                .next()
                .ok_or_else(|| corrupt("missing parameter values"))?
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| corrupt(format!("bad number `{t}`"))))
                .collect::<Result<_, _>>()?;
            if vals.len() != f[1] * f[2] {
                return Err(corrupt(format!("param {} has {} values, expected {}", f[0], vals.len(), f[1] * f[2])));
            }
            params.push(DenseMatrix::from_col_major(f[1], f[2], &vals));
        } else if let Some((k, v)) = line.split_once(" = ") {
            header.insert(k.trim().to_string(), v.trim().to_string());
        } else if !line.trim().is_empty() {
            return Err(corrupt(format!("unexpected line `{line}`")));
        }
    }

    let version = header.get("format_version").ok_or_else(|| corrupt("missing format_version"))?;
    if version.parse::<u32>().ok() != Some(FORMAT_VERSION) {
        return Err(ModelError::FormatVersionMismatch {
            found: version.clone(),
            expected: FORMAT_VERSION,
        });
    }
    let get = |k: &str| header.get(k).map(String::as_str).ok_or_else(|| corrupt(format!("missing `{k}`")));
    let num = |k: &str| -> Result<f64, ModelError> { get(k)?.parse().map_err(|_| corrupt(format!("bad `{k}`"))) };
    let int = |k: &str| -> Result<usize, ModelError> { get(k)?.parse().map_err(|_| corrupt(format!("bad `{k}`"))) };
    let dims = Dims {
        n_x: int("n_x")?,
        n_u: int("n_u")?,
        n_y: int("n_y")?,
        n_p: int("n_p")?,
    };
    let seed: u64 = get("seed")?.parse().map_err(|_| corrupt("bad `seed`"))?;

    let mut model: Model = match get("variant")? {
        "lfr" => LpvLfrModel::zeros(dims, int("n_w")?).into(),
        variant => {
            let spec = match get("coeff_map")? {
                "affine" => CoeffSpec::Affine,
                mode @ ("mlp" | "mlp_trunk") => {
                    let hidden = get("hidden")?;
                    let hidden = if hidden.is_empty() {
                        Vec::new()
                    } else {
                        hidden
                            .split(',')
                            .map(|h| h.trim().parse().map_err(|_| corrupt("bad `hidden`")))
                            .collect::<Result<_, _>>()?
                    };
                    CoeffSpec::Mlp {
                        mode: if mode == "mlp" { MlpMode::PerComponent } else { MlpMode::Trunk },
                        hidden,
                    }
                }
                other => return Err(corrupt(format!("unknown coeff_map `{other}`"))),
            };
            let mut m = match variant {
                "contracting" => LpvSsModel::contracting(dims, num("epsilon")?, &spec, seed),
                "lipschitz" => LpvSsModel::lipschitz(dims, num("gamma")?, num("epsilon")?, &spec, seed),
                "affine" if spec == CoeffSpec::Affine => LpvSsModel::affine_random(dims, seed),
                "affine" => return Err(corrupt("affine models need coeff_map = affine")),
                other => return Err(corrupt(format!("unknown variant `{other}`"))),
            };
            if let super::SsStructure::Contracting(c) = &mut m.structure {
                if get("alpha_mode")? == "fixed" {
                    c.alpha = AlphaParam::Fixed(num("alpha")?);
                }
            }
            m.seed = seed;
            m.into()
        }
    };
    if let Model::Lfr(m) = &mut model {
        m.seed = seed;
    }
    let expected = model.parameters();
    if expected.len() != params.len() {
        return Err(corrupt(format!("{} parameter blocks, expected {}", params.len(), expected.len())));
    }
    for (i, (a, b)) in expected.iter().zip(&params).enumerate() {
        if a.shape() != b.shape() {
            return Err(corrupt(format!("param {i} is {:?}, expected {:?}", b.shape(), a.shape())));
        }
    }
    model.set_parameters(&params);
    Ok(model)
}
