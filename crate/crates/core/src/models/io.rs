//! Versioned text format for model parameters.
//!
//! ```text
//! otlab-model 1
//! kind icnn                  # mlp | icnn | c-concave
//! dims 16 16 16 16 16 16     # mlp: all layer widths; icnn: input dim, then hidden widths
//! activation softplus
//! alpha 0.05
//! scale 1.2345
//! tensors 17
//! tensor 16 16               # shape, then one line of row-major values
//! 0.1 0.2 ...
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a write/read
//! cycle reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use super::{Activation, IcnnModel, MlpModel, Parametric, Potential};
use crate::error::{OtError, Result};
use crate::numcore::Tensor;

pub const FORMAT_VERSION: u32 = 1;

/// Anything the format can hold.
#[derive(Clone, Debug, PartialEq)]
pub enum SavedModel {
    Mlp(MlpModel),
    Icnn(IcnnModel),
    CConcave(IcnnModel),
}

impl From<Potential> for SavedModel {
    fn from(p: Potential) -> Self {
        match p {
            Potential::Mlp(m) => SavedModel::Mlp(m),
            Potential::Icnn(m) => SavedModel::Icnn(m),
            Potential::CConcave(m) => SavedModel::CConcave(m),
        }
    }
}

impl SavedModel {
    pub fn into_potential(self) -> Potential {
        match self {
            SavedModel::Mlp(m) => Potential::Mlp(m),
            SavedModel::Icnn(m) => Potential::Icnn(m),
            SavedModel::CConcave(m) => Potential::CConcave(m),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("otlab-model {FORMAT_VERSION}\n");
        let (kind, dims, act, alpha, scale, params): (_, Vec<usize>, _, _, _, &[Tensor]) = match self {
            SavedModel::Mlp(m) => ("mlp", m.widths().to_vec(), m.activation(), 0.0, 1.0, m.params()),
            SavedModel::Icnn(m) | SavedModel::CConcave(m) => {
                let mut dims = vec![m.dim()];
                dims.extend_from_slice(m.hidden());
                let kind = if matches!(self, SavedModel::Icnn(_)) { "icnn" } else { "c-concave" };
                (kind, dims, Activation::Softplus, m.alpha(), m.scale(), m.params())
            }
        };
        let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "kind {kind}");
        let _ = writeln!(s, "dims {}", join(&dims));
        let _ = writeln!(s, "activation {}", act.name());
        let _ = writeln!(s, "alpha {alpha}");
        let _ = writeln!(s, "scale {scale}");
        let _ = writeln!(s, "tensors {}", params.len());
        for p in params {
            let _ = writeln!(s, "tensor {}", join(p.shape()));
            let vals: Vec<String> = p.data().iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", vals.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| OtError::Parse(format!("model file ended before {what}")))
        };
        let header = next("header")?;
        let version = field(header, "otlab-model")?;
        if version != FORMAT_VERSION.to_string() {
            return Err(OtError::Parse(format!("unsupported model format version {version}")));
        }
        let kind = field(next("kind")?, "kind")?.to_string();
        let dims = parse_list::<usize>(field(next("dims")?, "dims")?)?;
        let activation = match field(next("activation")?, "activation")? {
            "softplus" => Activation::Softplus,
            "leaky-relu" => Activation::LeakyRelu,
            other => return Err(OtError::Parse(format!("unknown activation {other}"))),
        };
        let alpha: f64 = parse_one(field(next("alpha")?, "alpha")?)?;
        let scale: f64 = parse_one(field(next("scale")?, "scale")?)?;
        let count: usize = parse_one(field(next("tensors")?, "tensors")?)?;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let shape = parse_list::<usize>(field(next("tensor shape")?, "tensor")?)?;
            let values = parse_list::<f64>(next("tensor values")?)?;
            params.push(Tensor::new(shape, values)?);
        }
        if dims.len() < 2 {
            return Err(OtError::Parse("dims needs at least two entries".into()));
        }
        match kind.as_str() {
            "mlp" => Ok(SavedModel::Mlp(MlpModel::from_params(dims, activation, params)?)),
            "icnn" | "c-concave" => {
                let m = IcnnModel::from_params(dims[0], dims[1..].to_vec(), alpha, scale, params)?;
                Ok(if kind == "icnn" { SavedModel::Icnn(m) } else { SavedModel::CConcave(m) })
            }
            other => Err(OtError::Parse(format!("unknown model kind {other}"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .map(str::trim)
        .ok_or_else(|| OtError::Parse(format!("expected `{key}`, found `{line}`")))
}

fn parse_one<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| OtError::Parse(format!("cannot parse `{s}`")))
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split_whitespace().map(parse_one).collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    proptest! {
        #[test]
        fn text_round_trip_is_bit_exact(seed in any::<u64>(), dim in 1usize..5, width in 1usize..6, icnn in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = if icnn {
                let mut m = IcnnModel::init(dim, &[width, width], 0.05, 0.14, &mut rng).unwrap();
                m.set_scale(1.0 / 3.0);
                SavedModel::Icnn(m)
            } else {
                SavedModel::Mlp(MlpModel::init(&[dim, width, dim], Activation::LeakyRelu, 0.5, &mut rng).unwrap())
            };
            let back = SavedModel::from_text(&model.to_text()).unwrap();
            prop_assert_eq!(back, model);
        }
    }

    #[test]
    fn rejects_unknown_version_and_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = SavedModel::Mlp(MlpModel::init(&[2, 3, 1], Activation::Softplus, 0.1, &mut rng).unwrap());
        let text = m.to_text();
        assert!(SavedModel::from_text(&text.replace("otlab-model 1", "otlab-model 9")).is_err());
        assert!(SavedModel::from_text(&text.replace("dims 2 3 1", "dims 2 4 1")).is_err());
        assert!(SavedModel::from_text("").is_err());
    }
}
