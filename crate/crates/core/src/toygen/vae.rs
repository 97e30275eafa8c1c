//! Linear image autoencoder over 2×2 patches.
//!
//! The encoder is an orthonormal Haar transform of each 2×2 patch, one
//! token per patch and one channel per Haar coefficient, scaled by the
//! desk's latent gain. The decoder is a trainable affine map initialized to
//! the encoder's inverse.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp};
use crate::sysmodel::DeskParams;
use crate::tokenmerge::LatentFeature;

const CHANNELS: usize = 4;

/// Haar sign pattern over patch positions `(0,0), (0,1), (1,0), (1,1)`.
const HAAR: [[f64; 4]; 4] = [
    [1.0, 1.0, 1.0, 1.0],
    [1.0, -1.0, 1.0, -1.0],
    [1.0, 1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0, 1.0],
];

#[derive(Debug, Clone, PartialEq)]
pub struct VaePair {
    side: usize,
    /// `latent_dim × image_dim`, row-major.
    enc: Vec<f64>,
    pub decoder: Mlp,
}

/// Decoder regression example: received latent and reference image.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeSample {
    pub latent: Vec<f64>,
    pub target: Vec<f64>,
}

impl VaePair {
    pub fn new<R: Rng + ?Sized>(desk: &DeskParams, rng: &mut R) -> Self {
        let side = desk.image_side;
        let n = side * side;
        let half = side / 2;
        let gain = desk.latent_gain;
        let mut enc = vec![0.0; n * n];
        for pr in 0..half {
            for pc in 0..half {
                let token = pr * half + pc;
                for (k, signs) in HAAR.iter().enumerate() {
                    let row = token * CHANNELS + k;
                    for (q, s) in signs.iter().enumerate() {
                        let pix = (2 * pr + q / 2) * side + 2 * pc + q % 2;
                        enc[row * n + pix] = 0.5 * gain * s;
                    }
                }
            }
        }
        let mut decoder = Mlp::new(&[n, n], false, rng);
        let (w, b) = decoder.output_layer_mut();
        for o in 0..n {
            for i in 0..n {
                w[o * n + i] = enc[i * n + o] / (gain * gain);
            }
        }
        b.iter_mut().for_each(|v| *v = 0.0);
        VaePair { side, enc, decoder }
    }

    pub fn image_dim(&self) -> usize {
        self.side * self.side
    }

    pub fn encode(&self, image: &[f64]) -> Result<LatentFeature> {
        let n = self.image_dim();
        if image.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: image.len(),
            });
        }
        let data = (0..n)
            .map(|r| {
                self.enc[r * n..(r + 1) * n]
                    .iter()
                    .zip(image)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        LatentFeature::new(CHANNELS, data)
    }

    pub fn decode(&self, z: &LatentFeature) -> Result<Vec<f64>> {
        if z.as_slice().len() != self.image_dim() {
            return Err(Error::Dimension {
                expected: self.image_dim(),
                got: z.as_slice().len(),
            });
        }
        Ok(self.decoder.forward(z.as_slice()))
    }

    pub fn loss(&self, batch: &[DecodeSample]) -> f64 {
        batch
            .iter()
            .map(|s| mse(&self.decoder.forward(&s.latent), &s.target))
            .sum::<f64>()
            / batch.len() as f64
    }

    pub fn loss_and_grad(&self, batch: &[DecodeSample]) -> (f64, Vec<f64>) {
        let scale = 1.0 / (batch.len() * self.image_dim()) as f64;
        let mut grads = vec![0.0; self.decoder.params.len()];
        let x: Vec<f64> = batch
            .iter()
            .flat_map(|s| s.latent.iter().copied())
            .collect();
        let (mut out, trace) = self.decoder.forward_batch(&x);
        let mut loss = 0.0;
        for (mut row, s) in out.rows_mut().into_iter().zip(batch) {
            for (o, t) in row.iter_mut().zip(&s.target) {
                loss += (*o - t).powi(2) * scale;
                *o = 2.0 * (*o - t) * scale;
            }
        }
        self.decoder.backward_batch(&trace, &out, &mut grads);
        (loss, grads)
    }

    /// One Adam step on the decoder; returns the pre-update loss.
    pub fn finetune_step(&mut self, opt: &mut Adam, batch: &[DecodeSample]) -> Result<f64> {
        let (loss, grads) = self.loss_and_grad(batch);
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "decoder loss {loss} on a batch of {}",
                batch.len()
            )));
        }
        opt.descend(&mut self.decoder.params, &grads);
        Ok(loss)
    }
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fd;
    use crate::rng::stream;

    fn vae() -> VaePair {
        VaePair::new(&DeskParams::default(), &mut stream(21, 0))
    }

    #[test]
    fn encoder_is_orthonormal() {
        let v = vae();
        let n = v.image_dim();
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|i| v.enc[a * n + i] * v.enc[b * n + i]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let v = vae();
        let mut rng = stream(22, 0);
        let img: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let z = v.encode(&img).unwrap();
        assert_eq!(z.channels(), 4);
        assert_eq!(z.tokens(), 16);
        let back = v.decode(&z).unwrap();
        assert!(mse(&back, &img) < 1e-28);
        assert!(v.encode(&img[..10]).is_err());
    }

    #[test]
    fn token_is_a_patch() {
        let v = vae();
        let mut img = vec![0.0; 64];
        // patch (1, 2) -> token 6: pixels (2,4), (2,5), (3,4), (3,5)
        for (r, c) in [(2, 4), (2, 5), (3, 4), (3, 5)] {
            img[r * 8 + c] = 1.0;
        }
        let z = v.encode(&img).unwrap();
        assert_eq!(z.column(6), &[2.0, 0.0, 0.0, 0.0]);
        assert!(z
            .as_slice()
            .iter()
            .enumerate()
            .all(|(i, x)| i / 4 == 6 || *x == 0.0));
    }

    #[test]
    fn perfect_decoder_is_a_fixed_point() {
        let mut v = vae();
        let mut rng = stream(23, 0);
        let batch: Vec<DecodeSample> = (0..8)
            .map(|_| {
                let target: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
                DecodeSample {
                    latent: v.encode(&target).unwrap().into_vec(),
                    target,
                }
            })
            .collect();
        let mut opt = Adam::new(v.decoder.params.len(), 1e-3);
        assert!(v.finetune_step(&mut opt, &batch).unwrap() < 1e-28);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let v = vae();
        let mut rng = stream(24, 0);
        let batch: Vec<DecodeSample> = (0..4)
            .map(|_| DecodeSample {
                latent: (0..64).map(|_| rng.random_range(-1.0..1.0)).collect(),
                target: (0..64).map(|_| rng.random::<f64>()).collect(),
            })
            .collect();
        let (_, g) = v.loss_and_grad(&batch);
        let probes = fd::probes(g.len(), 10, &mut rng);
        let mut p = v.decoder.params.clone();
        let err = fd::check(&mut p, &g, &probes, 1e-6, |p| {
            let mut w = v.clone();
            w.decoder.params.copy_from_slice(p);
            w.loss(&batch)
        });
        assert!(err < 1e-4, "{err}");
    }
}
