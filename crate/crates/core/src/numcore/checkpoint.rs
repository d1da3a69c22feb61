//! Checkpoint container shared by every model kind.
//!
//! Layout:
//!
//! ```text
//! GNNDM-CHECKPOINT\n
//! <header as one line of JSON>\n
//! <f64 little-endian values of every array, in header order>
//! ```
//!
//! The header names each array with its shape, so the binary tail is
//! self-describing. Values are written with `to_le_bytes`, which makes the
//! round trip bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Layer, MlpParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &str = "GNNDM-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: u32,
    pub kind: String,
    pub version: String,
    pub seed: u64,
    pub meta: serde_json::Value,
    pub arrays: Vec<ArraySpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub arrays: Vec<Tensor>,
}

/// Architecture of one MLP as stored in a header.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl Checkpoint {
    pub fn new(kind: &str, seed: u64, meta: serde_json::Value) -> Self {
        Self {
            header: CheckpointHeader {
                format: FORMAT_VERSION,
                kind: kind.to_string(),
                version: CODE_VERSION.to_string(),
                seed,
                meta,
                arrays: Vec::new(),
            },
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.header.arrays.push(ArraySpec {
            name: name.into(),
            shape: t.shape().to_vec(),
        });
        self.arrays.push(t);
    }

    /// Appends every parameter of `mlp` as `<prefix>.w<i>` / `<prefix>.b<i>`
    /// and returns its architecture for the header.
    pub fn push_mlp(&mut self, prefix: &str, mlp: &MlpParams) -> MlpSpec {
        for (i, l) in mlp.layers().iter().enumerate() {
            self.push(format!("{prefix}.w{i}"), l.weight.clone());
            self.push(format!("{prefix}.b{i}"), l.bias.clone());
        }
        MlpSpec {
            dims: mlp.dims(),
            activations: mlp.activations(),
        }
    }

    pub fn array(&self, name: &str) -> Result<&Tensor> {
        self.header
            .arrays
            .iter()
            .position(|a| a.name == name)
            .map(|i| &self.arrays[i])
            .ok_or_else(|| Error::Format(format!("missing array {name}")))
    }

    pub fn mlp(&self, prefix: &str, spec: &MlpSpec) -> Result<MlpParams> {
        if spec.dims.len() != spec.activations.len() + 1 {
            return Err(Error::Format(format!("{prefix}: malformed mlp spec")));
        }
        let layers = spec
            .activations
            .iter()
            .enumerate()
            .map(|(i, &activation)| {
                let weight = self.array(&format!("{prefix}.w{i}"))?.clone();
                let bias = self.array(&format!("{prefix}.b{i}"))?.clone();
                if weight.shape() != [spec.dims[i], spec.dims[i + 1]] {
                    return Err(Error::Format(format!("{prefix}.w{i}: shape disagrees with spec")));
                }
                Ok(Layer {
                    weight,
                    bias,
                    activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MlpParams::from_layers(layers)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Format(format!(
                "expected checkpoint kind {kind:?}, found {:?}",
                self.header.kind
            )));
        }
        Ok(())
    }

    pub fn meta<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.header.meta.clone())?)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MAGIC}")?;
        serde_json::to_writer(&mut w, &self.header)?;
        writeln!(w)?;
        for t in &self.arrays {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end_matches('\n') != MAGIC {
            return Err(Error::Format("bad magic line".into()));
        }
        line.clear();
        r.read_line(&mut line)?;
        let header: CheckpointHeader = serde_json::from_str(line.trim_end_matches('\n'))?;
        if header.format != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format {}", header.format)));
        }
        let mut arrays = Vec::with_capacity(header.arrays.len());
        let mut buf = [0u8; 8];
        for spec in &header.arrays {
            let n: usize = spec.shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Format(format!("truncated array {}", spec.name)))?;
                data.push(f64::from_le_bytes(buf));
            }
            arrays.push(Tensor::new(spec.shape.clone(), data)?);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { header, arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn mlp_round_trip_is_bit_exact() {
        let mut rng = rng_from_seed(3);
        let m = MlpParams::xavier(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], &mut rng).unwrap();
        let mut ck = Checkpoint::new("test", 3, serde_json::Value::Null);
        let spec = ck.push_mlp("net", &m);
        ck.header.meta = serde_json::to_value(&spec).unwrap();
        let bytes = ck.to_bytes();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        let spec2: MlpSpec = back.meta().unwrap();
        let m2 = back.mlp("net", &spec2).unwrap();
        for (a, b) in m.params().iter().zip(m2.params()) {
            let ab: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_and_trailing_are_rejected() {
        let mut ck = Checkpoint::new("test", 0, serde_json::Value::Null);
        ck.push("x", Tensor::vector(vec![1.0, 2.0]));
        let bytes = ck.to_bytes();
        assert!(Checkpoint::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::read_from(extra.as_slice()).is_err());
        assert!(Checkpoint::read_from(&b"nope\n"[..]).is_err());
    }
}
