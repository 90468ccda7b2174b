use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Real;
use crate::container::{Container, Tensor};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

pub(crate) const CONTAINER_KIND: &str = "lmmix-neural-lm";
const INIT_RANGE: f64 = 0.05;

/// Shape of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NnArch {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_hid: usize,
    pub layers: usize,
}

impl NnArch {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.d_emb == 0 || self.d_hid == 0 || self.layers == 0 {
            return Err(Error::invalid(format!("degenerate network shape {self:?}")));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let (v, d, h) = (self.vocab_size, self.d_emb, self.d_hid);
        let lstm: usize = (0..self.layers)
            .map(|l| {
                let input = if l == 0 { d } else { h };
                4 * h * (input + h) + 4 * h
            })
            .sum();
        v * d + lstm + h * v + v
    }
}

/// One LSTM layer. Gate blocks are laid out `[i, f, g, o]` along the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<T> {
    /// input_dim × 4h
    pub w_x: Array2<T>,
    /// h × 4h
    pub w_h: Array2<T>,
    /// 4h
    pub b: Array1<T>,
}

/// Parameters of the LSTM language model.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralLm<T> {
    pub arch: NnArch,
    /// V × d_emb
    pub emb: Array2<T>,
    pub layers: Vec<LstmLayer<T>>,
    /// d_hid × V
    pub out_w: Array2<T>,
    pub out_b: Array1<T>,
}

/// Uniform(-0.05, 0.05) weights, forget-gate biases 1, other biases 0.
pub fn init_params<T: Real>(arch: &NnArch, seed: u64) -> Result<NeuralLm<T>> {
    arch.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut uniform = |rows: usize, cols: usize| {
        Array2::from_shape_simple_fn((rows, cols), || {
            T::lit(rng.gen_range(-INIT_RANGE..INIT_RANGE))
        })
    };
    let h = arch.d_hid;
    let emb = uniform(arch.vocab_size, arch.d_emb);
    let mut layers = Vec::with_capacity(arch.layers);
    for l in 0..arch.layers {
        let input = if l == 0 { arch.d_emb } else { h };
        let w_x = uniform(input, 4 * h);
        let w_h = uniform(h, 4 * h);
        let mut b = Array1::zeros(4 * h);
        b.slice_mut(ndarray::s![h..2 * h]).fill(T::one());
        layers.push(LstmLayer { w_x, w_h, b });
    }
    let out_w = uniform(h, arch.vocab_size);
    Ok(NeuralLm {
        arch: *arch,
        emb,
        layers,
        out_w,
        out_b: Array1::zeros(arch.vocab_size),
    })
}

impl<T: Real> NeuralLm<T> {
    pub fn zeros_like(&self) -> Self {
        NeuralLm {
            arch: self.arch,
            emb: Array2::zeros(self.emb.raw_dim()),
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    w_x: Array2::zeros(l.w_x.raw_dim()),
                    w_h: Array2::zeros(l.w_h.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
            out_w: Array2::zeros(self.out_w.raw_dim()),
            out_b: Array1::zeros(self.out_b.raw_dim()),
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Every parameter tensor as a flat slice, with its name.
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        let mut v: Vec<(String, &[T])> = vec![("emb".into(), self.emb.as_slice().unwrap())];
        for (i, l) in self.layers.iter().enumerate() {
            v.push((format!("lstm.{i}.w_x"), l.w_x.as_slice().unwrap()));
            v.push((format!("lstm.{i}.w_h"), l.w_h.as_slice().unwrap()));
            v.push((format!("lstm.{i}.b"), l.b.as_slice().unwrap()));
        }
        v.push(("out.w".into(), self.out_w.as_slice().unwrap()));
        v.push(("out.b".into(), self.out_b.as_slice().unwrap()));
        v
    }

    /// Same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = vec![self.emb.as_slice_mut().unwrap()];
        for l in &mut self.layers {
            v.push(l.w_x.as_slice_mut().unwrap());
            v.push(l.w_h.as_slice_mut().unwrap());
            v.push(l.b.as_slice_mut().unwrap());
        }
        v.push(self.out_w.as_slice_mut().unwrap());
        v.push(self.out_b.as_slice_mut().unwrap());
        v
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|x| {
                let x = x.to_f64().unwrap();
                x * x
            })
            .sum()
    }

    pub fn cast<U: Real>(&self) -> NeuralLm<U> {
        let c2 = |a: &Array2<T>| a.mapv(|x| U::lit(x.to_f64().unwrap()));
        let c1 = |a: &Array1<T>| a.mapv(|x| U::lit(x.to_f64().unwrap()));
        NeuralLm {
            arch: self.arch,
            emb: c2(&self.emb),
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    w_x: c2(&l.w_x),
                    w_h: c2(&l.w_h),
                    b: c1(&l.b),
                })
                .collect(),
            out_w: c2(&self.out_w),
            out_b: c1(&self.out_b),
        }
    }

    pub(crate) fn check_ids(&self, ids: &[u32]) -> Result<()> {
        match ids.iter().find(|&&id| id as usize >= self.arch.vocab_size) {
            Some(&id) => Err(Error::OutOfVocabulary {
                id,
                vocab_size: self.arch.vocab_size,
            }),
            None => Ok(()),
        }
    }
}

impl NeuralLm<f32> {
    pub fn to_container(&self) -> Result<Container> {
        let mut shapes = vec![vec![self.emb.nrows(), self.emb.ncols()]];
        for l in &self.layers {
            shapes.push(vec![l.w_x.nrows(), l.w_x.ncols()]);
            shapes.push(vec![l.w_h.nrows(), l.w_h.ncols()]);
            shapes.push(vec![l.b.len()]);
        }
        shapes.push(vec![self.out_w.nrows(), self.out_w.ncols()]);
        shapes.push(vec![self.out_b.len()]);
        let tensors = self
            .tensors()
            .into_iter()
            .zip(shapes)
            .map(|((name, data), shape)| Tensor::new(name, shape, data.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Container {
            kind: CONTAINER_KIND.into(),
            config: serde_json::to_value(self.arch)?,
            tensors,
        })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != CONTAINER_KIND {
            return Err(Error::invalid(format!(
                "expected a `{CONTAINER_KIND}` container, found `{}`",
                c.kind
            )));
        }
        let arch: NnArch = serde_json::from_value(c.config.clone())?;
        let mut m = init_params::<f32>(&arch, 0)?;
        let names: Vec<String> = m.tensors().into_iter().map(|(n, _)| n).collect();
        for (name, dst) in names.iter().zip(m.tensors_mut()) {
            let t = c.tensor(name)?;
            if t.data.len() != dst.len() {
                return Err(Error::DimensionMismatch {
                    expected: dst.len(),
                    got: t.data.len(),
                });
            }
            dst.copy_from_slice(&t.data);
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> NnArch {
        NnArch {
            vocab_size: 10,
            d_emb: 4,
            d_hid: 4,
            layers: 1,
        }
    }

    #[test]
    fn parameter_count() {
        let m = init_params::<f32>(&arch(), 1).unwrap();
        assert_eq!(m.num_params(), 234);
        assert_eq!(arch().num_params(), 234);
        let two = NnArch {
            layers: 2,
            ..arch()
        };
        assert_eq!(
            init_params::<f64>(&two, 1).unwrap().num_params(),
            two.num_params()
        );
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_params::<f32>(&arch(), 5).unwrap();
        assert_eq!(a, init_params::<f32>(&arch(), 5).unwrap());
        assert_ne!(a, init_params::<f32>(&arch(), 6).unwrap());
        assert!(a.emb.iter().all(|x| x.abs() <= 0.05));
        assert!(a.out_b.iter().all(|&x| x == 0.0));
        let b = &a.layers[0].b;
        assert!(b
            .iter()
            .enumerate()
            .all(|(i, &x)| x == if (4..8).contains(&i) { 1.0 } else { 0.0 }));
    }

    #[test]
    fn container_round_trip() {
        let a = init_params::<f32>(
            &NnArch {
                layers: 2,
                ..arch()
            },
            3,
        )
        .unwrap();
        let c = a.to_container().unwrap();
        assert_eq!(NeuralLm::from_container(&c).unwrap(), a);
    }
}
