//! Variational (per-sequence) dropout for recurrent layers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::Real;

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn sample_mask<F: Real, R: Rng + ?Sized>(rng: &mut R, len: usize, rate: f64) -> Result<Vec<F>> {
    check_rate(rate)?;
    let keep = F::of(1.0 / (1.0 - rate));
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
        .collect())
}

/// Masks for one direction of one sequence: the same input mask and the
/// same recurrent mask are reused at every timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceMasks<F> {
    pub input: Vec<F>,
    pub recurrent: Vec<F>,
}

impl<F: Real> SequenceMasks<F> {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize, rate: f64) -> Result<Self> {
        Ok(Self {
            input: sample_mask(rng, input, rate)?,
            recurrent: sample_mask(rng, hidden, rate)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmMasks<F> {
    pub forward: SequenceMasks<F>,
    pub backward: SequenceMasks<F>,
}

impl<F: Real> BiLstmMasks<F> {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize, rate: f64) -> Result<Self> {
        Ok(Self {
            forward: SequenceMasks::sample(rng, input, hidden, rate)?,
            backward: SequenceMasks::sample(rng, input, hidden, rate)?,
        })
    }
}

/// Apply one sampled mask to every element of a sequence. Returns the
/// masked sequence and the mask. With `rate == 0` the input is returned
/// unchanged.
pub fn apply_variational_dropout<F: Real, R: Rng + ?Sized>(
    inputs: &[Vec<F>],
    rate: f64,
    rng: &mut R,
) -> Result<(Vec<Vec<F>>, Vec<F>)> {
    check_rate(rate)?;
    let dim = inputs.first().map_or(0, Vec::len);
    if inputs.iter().any(|x| x.len() != dim) {
        return Err(Error::ShapeMismatch {
            op: "variational_dropout",
            shapes: inputs.iter().map(|x| vec![x.len()]).collect(),
        });
    }
    if rate == 0.0 {
        return Ok((inputs.to_vec(), vec![F::one(); dim]));
    }
    let mask = sample_mask(rng, dim, rate)?;
    let out = inputs
        .iter()
        .map(|x| x.iter().zip(&mask).map(|(&v, &m)| v * m).collect())
        .collect();
    Ok((out, mask))
}
