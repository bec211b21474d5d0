//! Independent oracles and random instance generators shared by the
//! integration tests.
#![allow(dead_code)]

use corridor::numerics::NumericsSettings;
use corridor::plant::PlantLTI;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Periodic unit-dose output `C e^{At} (I - e^{AT})^{-1} B` through the
/// spectral projectors of the chain matrix. Uses neither the Padé
/// exponential nor a linear solve.
pub struct SpectralProfile {
    poles: [f64; 3],
    coeff: [f64; 3],
}

impl SpectralProfile {
    pub fn new(plant: &PlantLTI, period: f64) -> Self {
        let [a1, a2, a3] = plant.rates();
        let [g1, g2] = plant.gains();
        let poles = [-a1, -a2, -a3];
        // C P_i B for the chain: residues of g1 g2 / ((s+a1)(s+a2)(s+a3)).
        let residue = |i: usize| {
            let p = poles[i];
            let denom: f64 = (0..3).filter(|&j| j != i).map(|j| p - poles[j]).product();
            g1 * g2 / denom
        };
        let coeff = [0, 1, 2].map(|i| residue(i) / (1.0 - (poles[i] * period).exp()));
        Self { poles, coeff }
    }

    pub fn output(&self, t: f64) -> f64 {
        (0..3).map(|i| self.coeff[i] * (self.poles[i] * t).exp()).sum()
    }

    /// `(argmin, min, argmax, max)` over `n` interior samples of `(0, T)`.
    pub fn dense_extrema(&self, period: f64, n: usize) -> (f64, f64, f64, f64) {
        let mut out = (0.0, f64::INFINITY, 0.0, f64::NEG_INFINITY);
        for k in 1..n {
            let t = period * k as f64 / n as f64;
            let y = self.output(t);
            if y < out.1 {
                out.0 = t;
                out.1 = y;
            }
            if y > out.3 {
                out.2 = t;
                out.3 = y;
            }
        }
        out
    }
}

pub fn random_plant(rng: &mut ChaCha8Rng) -> PlantLTI {
    let a1 = rng.gen_range(0.01..0.1);
    let a2 = a1 * rng.gen_range(1.5..6.0);
    let a3 = a2 * rng.gen_range(1.5..4.0);
    let g1 = rng.gen_range(0.2..2.0) * a1;
    let g2 = rng.gen_range(0.2..2.0) * a2 * a3 / g1 * a1;
    PlantLTI::new([a1, a2, a3], [g1, g2], &NumericsSettings::default()).unwrap()
}
