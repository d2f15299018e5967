//! Finite-difference gradient suites for the differentiable modules, in f64.

use std::fmt;
use std::str::FromStr;

use ccdc_tensor::gradcheck::{check_gradients, GradCheckReport};
use ccdc_tensor::{Binder, Graph, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::losses::{colorization_loss_var, warping_loss_var};
use crate::warp::{near_sample_kink, warp};

/// Relative-error tolerance every suite must meet.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const KINK_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradSuite {
    Warp,
    Losses,
    Encoders,
}

impl GradSuite {
    pub const ALL: [GradSuite; 3] = [GradSuite::Warp, GradSuite::Losses, GradSuite::Encoders];
}

impl fmt::Display for GradSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradSuite::Warp => "warp",
            GradSuite::Losses => "losses",
            GradSuite::Encoders => "encoders",
        })
    }
}

impl FromStr for GradSuite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradSuite::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Argument(format!("unknown gradcheck module {s:?} (expected warp, losses or encoders)")))
    }
}

#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub name: String,
    pub report: GradCheckReport,
}

impl SuiteCase {
    pub fn passes(&self) -> bool {
        self.report.passes(GRADCHECK_TOLERANCE)
    }
}

fn lift(op: &'static str) -> impl Fn(Error) -> TensorError {
    move |e| TensorError::argument(op, e.to_string())
}

fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// True for flow elements whose sample coordinate sits near a pixel centre,
/// where bilinear interpolation has a kink.
fn flow_kinks(flow: &Tensor<f64>) -> Vec<bool> {
    let [_, _, h, w] = flow.dims4().expect("flow is 4-d");
    flow.data()
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let p = i % (h * w);
            let base = if (i / (h * w)) % 2 == 0 { p % w } else { p / w };
            near_sample_kink(base as f64 + u, KINK_TOLERANCE)
        })
        .collect()
}

fn warp_cases(rng: &mut ChaCha8Rng) -> Result<Vec<SuiteCase>> {
    let (h, w) = (5, 5);
    let input = random(rng, vec![1, 3, h, w], 0.0, 1.0);
    let flow = random(rng, vec![1, 2, h, w], -2.0, 2.0);
    let weights = random(rng, vec![1, 3, h, w], -1.0, 1.0);
    let kinks = flow_kinks(&flow);
    let report = check_gradients(
        &[input, flow],
        1e-5,
        |g: &Graph<f64>, v| {
            let out = warp(v[0], v[1]).map_err(lift("warp"))?;
            Ok(out.mul(g.constant(weights.clone()))?.sum())
        },
        |i, e| i == 1 && kinks[e],
    )?;
    Ok(vec![SuiteCase { name: "bilinear warp (input, flow)".into(), report }])
}

fn loss_cases(rng: &mut ChaCha8Rng) -> Result<Vec<SuiteCase>> {
    let (h, w) = (5, 5);
    let reference = random(rng, vec![1, 3, h, w], 0.0, 1.0);
    let truth = random(rng, vec![1, 3, h, w], 0.0, 1.0);
    let flow = random(rng, vec![1, 2, h, w], -2.0, 2.0);
    let kinks = flow_kinks(&flow);
    let warping = check_gradients(
        &[flow],
        1e-5,
        |g: &Graph<f64>, v| {
            warping_loss_var(g.constant(reference.clone()), g.constant(truth.clone()), v[0]).map_err(lift("warping loss"))
        },
        |_, e| kinks[e],
    )?;
    let prediction = random(rng, vec![1, 3, h, w], 0.0, 1.0);
    let color = check_gradients(
        &[prediction],
        1e-6,
        |g: &Graph<f64>, v| colorization_loss_var(v[0], g.constant(truth.clone())).map_err(lift("colorization loss")),
        |_, _| false,
    )?;
    Ok(vec![
        SuiteCase { name: "warping loss (flow)".into(), report: warping },
        SuiteCase { name: "colorization loss (prediction)".into(), report: color },
    ])
}

fn encoder_cases(rng: &mut ChaCha8Rng) -> Result<Vec<SuiteCase>> {
    let mut cases = Vec::new();
    for channels in [1, 3] {
        let encoder = Encoder::<f64>::new("enc", channels, &[2, 3, 3, 4], rng)?;
        let image = random(rng, vec![1, channels, 16, 16], 0.0, 1.0);
        let weights: Vec<Tensor<f64>> = encoder
            .encode(&image.clone().reshape(vec![channels, 16, 16])?)?
            .levels()
            .iter()
            .map(|l| {
                let mut shape = vec![1];
                shape.extend_from_slice(l.shape());
                random(rng, shape, -1.0, 1.0)
            })
            .collect();
        let report = check_gradients(
            &[image],
            1e-6,
            |g: &Graph<f64>, v| {
                let mut binder = Binder::new(g, false);
                let levels = encoder.forward(&mut binder, v[0]).map_err(lift("encoder"))?;
                let mut total = None;
                for (level, wt) in levels.into_iter().zip(&weights) {
                    let term = level.mul(g.constant(wt.clone()))?.sum();
                    total = Some(match total {
                        None => term,
                        Some(t) => term.add(t)?,
                    });
                }
                Ok(total.expect("encoder has levels"))
            },
            |_, _| false,
        )?;
        cases.push(SuiteCase { name: format!("{channels}-channel encoder (input)"), report });
    }
    Ok(cases)
}

/// Runs one suite on random data drawn from `seed`.
pub fn run_gradcheck(suite: GradSuite, seed: u64) -> Result<Vec<SuiteCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match suite {
        GradSuite::Warp => warp_cases(&mut rng),
        GradSuite::Losses => loss_cases(&mut rng),
        GradSuite::Encoders => encoder_cases(&mut rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes() {
        for suite in GradSuite::ALL {
            for case in run_gradcheck(suite, 3).unwrap() {
                assert!(case.passes(), "{suite}: {} {:?}", case.name, case.report);
            }
        }
    }

    #[test]
    fn suite_names_parse() {
        for suite in GradSuite::ALL {
            assert_eq!(suite.to_string().parse::<GradSuite>().unwrap(), suite);
        }
        assert!("flow".parse::<GradSuite>().is_err());
    }
}
