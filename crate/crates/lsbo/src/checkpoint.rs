//! Text checkpoints for the VAE and the GP.
//!
//! ```text
//! lsbo-checkpoint 1
//! model vae
//! meta likelihood bernoulli
//! meta activation tanh
//! tensor encoder0.weight 100 100
//! <one line per row, space-separated>
//! ...
//! end
//! ```
//!
//! Values are written in shortest round-trip form, so loading restores the
//! exact bits.

use std::path::Path;

use lsbo_core::gp::{GplvmModel, OutputTransform, SqExpArdKernel};
use lsbo_core::ndcore::{Mat, Tensor};
use lsbo_core::vae::{Activation, Likelihood, VaeModel};

use crate::error::{io_err, Error, Result};

pub const MAGIC: &str = "lsbo-checkpoint";
pub const VERSION: u32 = 1;

pub const VAE_TENSORS: [&str; 9] = [
    "encoder0.weight",
    "encoder0.bias",
    "encoder1.weight",
    "encoder1.bias",
    "decoder0.weight",
    "decoder0.bias",
    "decoder1.weight",
    "decoder1.bias",
    "log_noise",
];

pub const GP_TENSORS: [&str; 6] = [
    "log_variance",
    "log_lengthscales",
    "log_noise_variance",
    "inducing",
    "q_mean",
    "q_chol_raw",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    pub meta: Vec<(String, String)>,
    /// Name, rows, cols, row-major values.
    pub tensors: Vec<(String, usize, usize, Vec<f64>)>,
}

impl Checkpoint {
    pub fn render(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\nmodel {}\n", self.model);
        for (k, v) in &self.meta {
            out.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, rows, cols, data) in &self.tensors {
            out.push_str(&format!("tensor {name} {rows} {cols}\n"));
            for r in 0..*rows {
                let line: Vec<String> = data[r * cols..(r + 1) * cols].iter().map(|v| format!("{v:e}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let fail = |line: usize, message: String| Error::Format {
            what: "checkpoint",
            line,
            message,
        };
        let mut next = |expect: &str| lines.next().ok_or_else(|| fail(0, format!("truncated, expected {expect}")));

        let (n, head) = next("header")?;
        let mut parts = head.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(fail(n, "not a checkpoint".into()));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| fail(n, "missing version".into()))?;
        if version != VERSION {
            return Err(fail(n, format!("unsupported version {version}")));
        }
        let (n, model_line) = next("model line")?;
        let model = model_line
            .strip_prefix("model ")
            .ok_or_else(|| fail(n, "expected `model <kind>`".into()))?
            .to_string();

        let mut meta = Vec::new();
        let mut tensors = Vec::new();
        loop {
            let (n, line) = next("`end`")?;
            if line == "end" {
                break;
            }
            let mut w = line.split_whitespace();
            match w.next() {
                Some("meta") => {
                    let k = w.next().ok_or_else(|| fail(n, "meta without key".into()))?;
                    let v: Vec<&str> = w.collect();
                    meta.push((k.to_string(), v.join(" ")));
                }
                Some("tensor") => {
                    let name = w.next().ok_or_else(|| fail(n, "tensor without name".into()))?.to_string();
                    let mut dim = || -> Result<usize> {
                        w.next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| fail(n, format!("bad shape for `{name}`")))
                    };
                    let (rows, cols) = (dim()?, dim()?);
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (n, row) = next("tensor row")?;
                        let before = data.len();
                        for v in row.split_whitespace() {
                            let x: f64 = v.parse().map_err(|_| fail(n, format!("bad number `{v}`")))?;
                            if !x.is_finite() {
                                return Err(fail(n, format!("non-finite value in `{name}`")));
                            }
                            data.push(x);
                        }
                        if data.len() - before != cols {
                            return Err(fail(n, format!("`{name}` row has {} values, expected {cols}", data.len() - before)));
                        }
                    }
                    tensors.push((name, rows, cols, data));
                }
                _ => return Err(fail(n, format!("unexpected line `{line}`"))),
            }
        }
        Ok(Self { model, meta, tensors })
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format {
                what: "checkpoint",
                line: 0,
                message: format!("missing meta `{key}`"),
            })
    }

    fn tensor(&self, name: &str) -> Result<(usize, usize, &[f64])> {
        self.tensors
            .iter()
            .find(|t| t.0 == name)
            .map(|(_, r, c, d)| (*r, *c, d.as_slice()))
            .ok_or_else(|| Error::Format {
                what: "checkpoint",
                line: 0,
                message: format!("missing tensor `{name}`"),
            })
    }

    /// Copies the named tensors into `params`, which must already have the
    /// stored shapes.
    fn fill(&self, names: &[&str], params: Vec<&mut Tensor>) -> Result<()> {
        for (name, t) in names.iter().zip(params) {
            let (r, c, data) = self.tensor(name)?;
            if t.dims2() != (r, c) {
                return Err(Error::Format {
                    what: "checkpoint",
                    line: 0,
                    message: format!("`{name}` is {r}x{c}, model expects {:?}", t.dims2()),
                });
            }
            t.data_mut().copy_from_slice(data);
        }
        Ok(())
    }

    fn expect_model(&self, kind: &str) -> Result<()> {
        if self.model != kind {
            return Err(Error::Format {
                what: "checkpoint",
                line: 2,
                message: format!("holds a `{}` model, expected `{kind}`", self.model),
            });
        }
        Ok(())
    }
}

fn bad_meta(key: &str, v: &str) -> Error {
    Error::Format {
        what: "checkpoint",
        line: 0,
        message: format!("bad value `{v}` for meta `{key}`"),
    }
}

fn collect(names: &[&str], params: &[&Tensor]) -> Vec<(String, usize, usize, Vec<f64>)> {
    names
        .iter()
        .zip(params)
        .map(|(n, t)| {
            let (r, c) = t.dims2();
            (n.to_string(), r, c, t.data().to_vec())
        })
        .collect()
}

pub fn vae_checkpoint(vae: &VaeModel) -> Checkpoint {
    Checkpoint {
        model: "vae".into(),
        meta: vec![
            ("likelihood".into(), vae.likelihood().name().into()),
            ("activation".into(), vae.activation().name().into()),
        ],
        tensors: collect(&VAE_TENSORS, &vae.params()),
    }
}

pub fn vae_from_checkpoint(ck: &Checkpoint) -> Result<VaeModel> {
    ck.expect_model("vae")?;
    let lik = ck.meta("likelihood")?;
    let likelihood = Likelihood::from_name(lik).ok_or_else(|| bad_meta("likelihood", lik))?;
    let act = ck.meta("activation")?;
    let activation = Activation::from_name(act).ok_or_else(|| bad_meta("activation", act))?;
    let (input_dim, _, _) = ck.tensor("encoder0.weight")?;
    let (latent_dim, _, _) = ck.tensor("decoder0.weight")?;
    let mut vae = VaeModel::zeroed(input_dim, latent_dim, likelihood)?.with_activation(activation);
    ck.fill(&VAE_TENSORS, vae.params_mut().into_iter().collect())?;
    Ok(vae)
}

pub fn gp_checkpoint(gp: &GplvmModel) -> Checkpoint {
    let out = gp.output_transform();
    Checkpoint {
        model: "gp".into(),
        meta: vec![
            ("num_mc_samples".into(), gp.num_mc_samples.to_string()),
            ("output_shift".into(), format!("{:e}", out.shift)),
            ("output_scale".into(), format!("{:e}", out.scale)),
        ],
        tensors: collect(&GP_TENSORS, &gp.params()),
    }
}

pub fn gp_from_checkpoint(ck: &Checkpoint) -> Result<GplvmModel> {
    ck.expect_model("gp")?;
    let num = |key: &str| -> Result<f64> {
        let v = ck.meta(key)?;
        v.parse().map_err(|_| bad_meta(key, v))
    };
    let mc = ck.meta("num_mc_samples")?;
    let num_mc_samples: usize = mc.parse().map_err(|_| bad_meta("num_mc_samples", mc))?;
    let output = OutputTransform {
        shift: num("output_shift")?,
        scale: num("output_scale")?,
    };
    let (m, d, inducing) = ck.tensor("inducing")?;
    let (_, _, ls) = ck.tensor("log_lengthscales")?;
    let (_, _, var) = ck.tensor("log_variance")?;
    let (_, _, noise) = ck.tensor("log_noise_variance")?;
    if var.len() != 1 || noise.len() != 1 || ls.len() != d {
        return Err(bad_meta("kernel shapes", &format!("{} {} {}", var.len(), noise.len(), ls.len())));
    }
    let kernel = SqExpArdKernel::new(var[0].exp(), ls.iter().map(|v| v.exp()).collect())?;
    let mut gp = GplvmModel::new(kernel, Mat::from_fn(m, d, |i, j| inducing[i * d + j]), noise[0].exp())?;
    ck.fill(&GP_TENSORS, gp.params_mut().into_iter().collect())?;
    gp.num_mc_samples = num_mc_samples.max(1);
    gp.set_output_transform(output);
    Ok(gp)
}

pub fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ck.render()).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Checkpoint::parse(&text)
}
