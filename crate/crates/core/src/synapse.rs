//! Presynaptic fan-out tables: for every neuron of layer `n - 1`, the layer-`n`
//! neurons it drives and the weight on each synapse, in compressed row form.

use crate::error::{Error, Result};
use crate::forward::StageOp;

/// Weight-index form of a layer's synapses, independent of the numeric type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connectivity {
    /// Row `i` spans `offsets[i]..offsets[i + 1]`.
    pub offsets: Vec<u32>,
    pub targets: Vec<u32>,
    /// Index into the layer's flattened weight tensor.
    pub weight_index: Vec<u32>,
}

impl Connectivity {
    pub fn sources(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn fan_out(&self, source: usize) -> u32 {
        self.offsets[source + 1] - self.offsets[source]
    }

    pub fn synapses(&self) -> usize {
        self.targets.len()
    }

    fn from_edges(sources: usize, edges: impl Fn(&mut dyn FnMut(usize, u32, u32))) -> Result<Self> {
        let mut counts = vec![0u32; sources + 1];
        edges(&mut |src, _, _| counts[src + 1] += 1);
        let mut offsets = counts;
        for i in 1..offsets.len() {
            offsets[i] = offsets[i - 1]
                .checked_add(offsets[i])
                .ok_or_else(|| Error::Unsupported("layer has more than 2^32 synapses".into()))?;
        }
        let total = offsets[sources] as usize;
        let mut cursor = offsets.clone();
        let mut targets = vec![0u32; total];
        let mut weight_index = vec![0u32; total];
        edges(&mut |src, dst, w| {
            let k = cursor[src] as usize;
            targets[k] = dst;
            weight_index[k] = w;
            cursor[src] += 1;
        });
        Ok(Connectivity {
            offsets,
            targets,
            weight_index,
        })
    }
}

/// Enumerates the synapses of a stage from its geometry.
pub fn connectivity(op: &StageOp, input_shape: &[usize], output_shape: &[usize]) -> Result<Connectivity> {
    let sources: usize = input_shape.iter().product();
    match *op {
        StageOp::Dense { units } => Connectivity::from_edges(sources, |emit| {
            for i in 0..sources {
                for j in 0..units {
                    emit(i, j as u32, (j * sources + i) as u32);
                }
            }
        }),
        StageOp::Conv2D {
            out_channels,
            kernel_size: [kh, kw],
            stride,
            padding,
        } => {
            let [c_in, h, w] = dims3(input_shape)?;
            let [_, oh, ow] = dims3(output_shape)?;
            Connectivity::from_edges(sources, |emit| {
                for o in 0..out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let dst = ((o * oh + oy) * ow + ox) as u32;
                            for c in 0..c_in {
                                for ky in 0..kh {
                                    let Some(y) = (oy * stride + ky).checked_sub(padding).filter(|&y| y < h) else {
                                        continue;
                                    };
                                    for kx in 0..kw {
                                        let Some(x) = (ox * stride + kx).checked_sub(padding).filter(|&x| x < w) else {
                                            continue;
                                        };
                                        let src = (c * h + y) * w + x;
                                        emit(src, dst, (((o * c_in + c) * kh + ky) * kw + kx) as u32);
                                    }
                                }
                            }
                        }
                    }
                }
            })
        }
        StageOp::AvgPool { window, stride } => {
            let [c_in, h, w] = dims3(input_shape)?;
            let [_, oh, ow] = dims3(output_shape)?;
            Connectivity::from_edges(sources, |emit| {
                for c in 0..c_in {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let dst = ((c * oh + oy) * ow + ox) as u32;
                            for ky in 0..window {
                                for kx in 0..window {
                                    let src = (c * h + oy * stride + ky) * w + ox * stride + kx;
                                    emit(src, dst, 0);
                                }
                            }
                        }
                    }
                }
            })
        }
    }
}

fn dims3(shape: &[usize]) -> Result<[usize; 3]> {
    <[usize; 3]>::try_from(shape)
        .map_err(|_| Error::shape("synapse table", format!("expected [C, H, W], got {shape:?}")))
}

/// Fan-out table with the weights resolved to the simulation's numeric type.
#[derive(Debug, Clone)]
pub struct SynapseTable<P> {
    offsets: Vec<u32>,
    targets: Vec<u32>,
    weights: Vec<P>,
}

impl<P: Copy> SynapseTable<P> {
    pub fn new(conn: &Connectivity, weights: &[P]) -> Result<Self> {
        if let Some(&bad) = conn.weight_index.iter().find(|&&k| k as usize >= weights.len()) {
            return Err(Error::shape(
                "synapse table",
                format!("weight index {bad} outside a tensor of {} elements", weights.len()),
            ));
        }
        Ok(SynapseTable {
            offsets: conn.offsets.clone(),
            targets: conn.targets.clone(),
            weights: conn.weight_index.iter().map(|&k| weights[k as usize]).collect(),
        })
    }

    pub fn sources(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Synapses leaving `source` as `(target, weight)` pairs.
    pub fn row(&self, source: usize) -> impl Iterator<Item = (usize, P)> + '_ {
        let span = self.offsets[source] as usize..self.offsets[source + 1] as usize;
        self.targets[span.clone()]
            .iter()
            .map(|&t| t as usize)
            .zip(self.weights[span].iter().copied())
    }

    pub fn fan_out(&self, source: usize) -> u32 {
        self.offsets[source + 1] - self.offsets[source]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{avgpool_forward, conv2d_forward, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn propagate(conn: &Connectivity, weights: &[f32], input: &[f32], outputs: usize) -> Vec<f64> {
        let table = SynapseTable::new(conn, weights).unwrap();
        let mut out = vec![0.0f64; outputs];
        for (i, &x) in input.iter().enumerate() {
            for (t, w) in table.row(i) {
                out[t] += w as f64 * x as f64;
            }
        }
        out
    }

    #[test]
    fn conv_table_reproduces_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input: Vec<f32> = (0..2 * 5 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weight: Vec<f32> = (0..3 * 2 * 3 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for (stride, padding) in [(1, 0), (1, 1), (2, 1)] {
            let x = Tensor::new(vec![2, 5, 5], input.clone()).unwrap();
            let w = Tensor::new(vec![3, 2, 3, 3], weight.clone()).unwrap();
            let expected = conv2d_forward(&x, &w, None, stride, padding).unwrap();
            let op = StageOp::Conv2D {
                out_channels: 3,
                kernel_size: [3, 3],
                stride,
                padding,
            };
            let conn = connectivity(&op, &[2, 5, 5], expected.shape()).unwrap();
            let got = propagate(&conn, &weight, &input, expected.len());
            for (a, b) in got.iter().zip(expected.data()) {
                assert!((*a as f32 - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn pool_table_reproduces_pooling() {
        let input: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let x = Tensor::new(vec![1, 4, 4], input.clone()).unwrap();
        let expected = avgpool_forward(&x, 2, 2).unwrap();
        let conn = connectivity(&StageOp::AvgPool { window: 2, stride: 2 }, &[1, 4, 4], &[1, 2, 2]).unwrap();
        let got = propagate(&conn, &[0.25], &input, 4);
        assert_eq!(got.iter().map(|&v| v as f32).collect::<Vec<_>>(), expected.data());
    }

    #[test]
    fn dense_fan_out_is_unit_count() {
        let conn = connectivity(&StageOp::Dense { units: 7 }, &[2, 2, 2], &[7]).unwrap();
        assert_eq!(conn.sources(), 8);
        assert!((0..8).all(|i| conn.fan_out(i) == 7));
        assert_eq!(conn.synapses(), 56);
    }
}
