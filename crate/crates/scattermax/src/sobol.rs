//! Deterministic Sobol low-discrepancy sequences and affine scaling into
//! box domains.
//!
//! The generator uses the Joe–Kuo direction numbers with the Gray-code
//! construction and includes the origin as the first point, so the first
//! `2^k` points of every 1-D projection stratify `[0,1)` exactly. Identical
//! inputs yield bit-identical outputs on every platform.

use crate::domain::{BoxDomain, ParameterVector};
use crate::error::{Error, Result};

/// One point of the unit hypercube `[0,1)^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSample {
    coords: Vec<f64>,
}

impl UnitSample {
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

impl std::ops::Deref for UnitSample {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.coords
    }
}

const BITS: usize = 32;
const SCALE: f64 = 1.0 / (1u64 << BITS) as f64;

/// Maximum supported dimension of [`sobol_sequence`].
pub const MAX_DIM: usize = JOE_KUO.len() + 1;

const _: () = assert!(MAX_DIM >= 16);

/// Joe–Kuo primitive polynomial parameters `(s, a, m)` for dimensions
/// 2..=MAX_DIM (dimension 1 is the van der Corput sequence in base 2).
/// Rows follow the published `new-joe-kuo-6` table.
const JOE_KUO: &[(usize, u32, &[u32])] = &[
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
];

/// Direction numbers for one dimension (dimension index 0 is van der Corput).
fn direction_numbers(dim_index: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim_index == 0 {
        for (c, slot) in v.iter_mut().enumerate() {
            *slot = 1u32 << (BITS - 1 - c);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[dim_index - 1];
    debug_assert_eq!(m.len(), s);
    for c in 0..s.min(BITS) {
        debug_assert!(m[c] % 2 == 1 && m[c] < (1 << (c + 1)));
        v[c] = m[c] << (BITS - 1 - c);
    }
    for c in s..BITS {
        let mut val = v[c - s] ^ (v[c - s] >> s as u32);
        for k in 1..s {
            if (a >> (s - 1 - k)) & 1 == 1 {
                val ^= v[c - k];
            }
        }
        v[c] = val;
    }
    v
}

/// Generate `count` consecutive Sobol points in `[0,1)^dim`, discarding the
/// first `skip` points of the underlying sequence. The sequence starts at
/// the origin.
pub fn sobol_sequence(dim: usize, count: usize, skip: usize) -> Result<Vec<UnitSample>> {
    if dim == 0 {
        return Err(Error::InvalidDomain("Sobol dimension must be >= 1".into()));
    }
    if dim > MAX_DIM {
        return Err(Error::UnsupportedDimension { dim, max: MAX_DIM });
    }
    if count == 0 {
        return Err(Error::InvalidDomain("Sobol count must be >= 1".into()));
    }
    let total = skip
        .checked_add(count)
        .filter(|t| *t <= (1usize << BITS))
        .ok_or_else(|| Error::InvalidDomain("skip + count exceeds 2^32 points".into()))?;

    let directions: Vec<[u32; BITS]> = (0..dim).map(direction_numbers).collect();

    let mut state = vec![0u32; dim];
    let mut out = Vec::with_capacity(count);
    if skip == 0 {
        out.push(UnitSample { coords: vec![0.0; dim] });
    }
    // Gray-code update: point n differs from point n-1 in direction ctz(n).
    for n in 1..total {
        let c = n.trailing_zeros() as usize;
        for (x, dirs) in state.iter_mut().zip(&directions) {
            *x ^= dirs[c.min(BITS - 1)];
        }
        if n >= skip {
            out.push(UnitSample {
                coords: state.iter().map(|x| *x as f64 * SCALE).collect(),
            });
        }
    }
    Ok(out)
}

/// Affinely map unit-cube samples into a box: `lower + u * (upper - lower)`
/// per axis.
pub fn scale_to_domain(samples: &[UnitSample], domain: &BoxDomain) -> Result<Vec<ParameterVector>> {
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        domain.check_dim(s.dim())?;
        out.push(
            s.coords()
                .iter()
                .enumerate()
                .map(|(i, u)| domain.lower()[i] + u * domain.span(i))
                .collect(),
        );
    }
    Ok(out)
}

/// Sobol points scaled into `domain` in one step.
pub fn sobol_in_domain(domain: &BoxDomain, count: usize, skip: usize) -> Result<Vec<ParameterVector>> {
    let samples = sobol_sequence(domain.dim(), count, skip)?;
    scale_to_domain(&samples, domain)
}
