//! Mixed-noise simulation for cubes scaled to `[0, 1]`.
//!
//! The five cases:
//! 1. Gaussian noise, std 0.2, on every band.
//! 2. Case 1 plus salt-and-pepper impulse noise at rate 0.1.
//! 3. Case 2 plus deadlines on 50% of the bands: 6-10 per band, widths 1-3.
//! 4. Case 2 plus stripes on 40% of the bands: 6-15 per band.
//! 5. Case 2 plus the deadlines of case 3 and the stripes of case 4.
//!
//! Choices not fixed by the case definitions: deadlines and stripes run along
//! full columns; a deadline sets its columns to exactly 0; a stripe adds one
//! offset, uniform in `[-0.5, 0.5]`, to its whole column; affected bands are
//! drawn uniformly without replacement, `floor(fraction * b)` of them.

use std::fmt;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fourier::t_product;
use crate::kv::KvMap;
use crate::random::{gaussian_tensor, rng, substream, Rng};
use crate::tensor::Tensor3;

/// Stream ids of the generators inside [`make_case`].
pub const GAUSSIAN_STREAM: u64 = 1;
pub const IMPULSE_STREAM: u64 = 2;
pub const DEADLINE_STREAM: u64 = 3;
pub const STRIPE_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseCase {
    Gaussian = 1,
    Impulse = 2,
    Deadlines = 3,
    Stripes = 4,
    Mixed = 5,
}

impl NoiseCase {
    pub fn from_id(id: u32) -> Result<Self> {
        Ok(match id {
            1 => NoiseCase::Gaussian,
            2 => NoiseCase::Impulse,
            3 => NoiseCase::Deadlines,
            4 => NoiseCase::Stripes,
            5 => NoiseCase::Mixed,
            _ => return Err(Error::Argument(format!("unknown noise case {id}"))),
        })
    }

    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn has_impulse(self) -> bool {
        self != NoiseCase::Gaussian
    }

    pub fn has_deadlines(self) -> bool {
        matches!(self, NoiseCase::Deadlines | NoiseCase::Mixed)
    }

    pub fn has_stripes(self) -> bool {
        matches!(self, NoiseCase::Stripes | NoiseCase::Mixed)
    }
}

impl fmt::Display for NoiseCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountRange {
    pub low: usize,
    pub high: usize,
}

impl CountRange {
    pub const fn new(low: usize, high: usize) -> Self {
        Self { low, high }
    }

    fn sample(&self, rng: &mut Rng) -> usize {
        rng.random_range(self.low..=self.high)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.low > self.high {
            return Err(Error::Argument(format!(
                "{name} range {}..{} is empty",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

impl fmt::Display for CountRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.low, self.high)
    }
}

impl std::str::FromStr for CountRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| Error::Parse(format!("expected low..high, got '{s}'")))?;
        let p = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad range bound '{v}': {e}")))
        };
        Ok(CountRange::new(p(a)?, p(b)?))
    }
}

/// Declarative description of one noise case.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub case: NoiseCase,
    pub gaussian_std: f64,
    pub impulse_rate: f64,
    pub deadline_band_fraction: f64,
    pub deadline_count: CountRange,
    pub deadline_width: CountRange,
    pub stripe_band_fraction: f64,
    pub stripe_count: CountRange,
    /// Stripe offsets are uniform in `[-stripe_amplitude, stripe_amplitude]`.
    pub stripe_amplitude: f64,
    pub seed: u64,
}

impl NoiseSpec {
    /// The published parameters of a case.
    pub fn case(case: NoiseCase, seed: u64) -> Self {
        Self {
            case,
            gaussian_std: 0.2,
            impulse_rate: 0.1,
            deadline_band_fraction: 0.5,
            deadline_count: CountRange::new(6, 10),
            deadline_width: CountRange::new(1, 3),
            stripe_band_fraction: 0.4,
            stripe_count: CountRange::new(6, 15),
            stripe_amplitude: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("impulse_rate", self.impulse_rate),
            ("deadline_band_fraction", self.deadline_band_fraction),
            ("stripe_band_fraction", self.stripe_band_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Argument(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.gaussian_std >= 0.0) {
            return Err(Error::Argument(format!(
                "gaussian_std must be >= 0, got {}",
                self.gaussian_std
            )));
        }
        if !(self.stripe_amplitude >= 0.0) {
            return Err(Error::Argument(format!(
                "stripe_amplitude must be >= 0, got {}",
                self.stripe_amplitude
            )));
        }
        self.deadline_count.validate("deadline_count")?;
        self.deadline_width.validate("deadline_width")?;
        self.stripe_count.validate("stripe_count")?;
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("noise.case", self.case);
        kv.insert("noise.gaussian_std", self.gaussian_std);
        kv.insert("noise.impulse_rate", self.impulse_rate);
        kv.insert("noise.deadline_band_fraction", self.deadline_band_fraction);
        kv.insert("noise.deadline_count", self.deadline_count);
        kv.insert("noise.deadline_width", self.deadline_width);
        kv.insert("noise.stripe_band_fraction", self.stripe_band_fraction);
        kv.insert("noise.stripe_count", self.stripe_count);
        kv.insert("noise.stripe_amplitude", self.stripe_amplitude);
        kv.insert("noise.seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let spec = Self {
            case: NoiseCase::from_id(kv.parse("noise.case")?)?,
            gaussian_std: kv.parse("noise.gaussian_std")?,
            impulse_rate: kv.parse("noise.impulse_rate")?,
            deadline_band_fraction: kv.parse("noise.deadline_band_fraction")?,
            deadline_count: kv.parse("noise.deadline_count")?,
            deadline_width: kv.parse("noise.deadline_width")?,
            stripe_band_fraction: kv.parse("noise.stripe_band_fraction")?,
            stripe_count: kv.parse("noise.stripe_count")?,
            stripe_amplitude: kv.parse("noise.stripe_amplitude")?,
            seed: kv.parse("noise.seed")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A zeroed run of columns `start..start + width` in one band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deadline {
    pub band: usize,
    pub start: usize,
    pub width: usize,
}

/// A constant offset added to one column of one band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stripe {
    pub band: usize,
    pub column: usize,
    pub offset: f64,
}

/// What a generator did, for audits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorruptionReport {
    pub impulse_count: usize,
    pub deadlines: Vec<Deadline>,
    pub stripes: Vec<Stripe>,
}

/// `Y = X + N` with `N` i.i.d. `normal(0, std^2)`.
pub fn add_gaussian(x: &Tensor3, std: f64, rng: &mut Rng) -> Result<Tensor3> {
    if !(std >= 0.0) {
        return Err(Error::Argument(format!("std must be >= 0, got {std}")));
    }
    let mut y = x.clone();
    if std == 0.0 {
        return Ok(y);
    }
    for v in y.data_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *v += std * n;
    }
    Ok(y)
}

fn impulse(x: &Tensor3, rate: f64, rng: &mut Rng) -> Result<(Tensor3, usize)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Argument(format!("impulse rate must lie in [0, 1], got {rate}")));
    }
    let mut y = x.clone();
    let mut count = 0;
    if rate == 0.0 {
        return Ok((y, 0));
    }
    for v in y.data_mut() {
        if rng.random::<f64>() < rate {
            *v = if rng.random::<bool>() { 1.0 } else { 0.0 };
            count += 1;
        }
    }
    Ok((y, count))
}

/// Salt-and-pepper noise: every element is hit independently with probability
/// `rate` and replaced by 0 or 1 with equal odds. Elements that are not hit are
/// left as they are, even outside `[0, 1]` (a warning is logged for such input).
pub fn add_impulse(x: &Tensor3, rate: f64, rng: &mut Rng) -> Result<Tensor3> {
    let (lo, hi) = x.min_max();
    if lo < 0.0 || hi > 1.0 {
        log::warn!("impulse noise on data outside [0, 1] (range {lo:.3}..{hi:.3}); values are not clamped");
    }
    Ok(impulse(x, rate, rng)?.0)
}

fn choose_bands(b: usize, fraction: f64, rng: &mut Rng) -> Vec<usize> {
    let n = ((fraction * b as f64).floor() as usize).min(b);
    let mut bands = sample(rng, b, n).into_vec();
    bands.sort_unstable();
    bands
}

/// Places `widths` as disjoint column runs in `0..w`, uniformly over
/// arrangements. Falls back to independent (possibly overlapping) placement
/// when the runs cannot all fit.
fn place_runs(widths: &[usize], w: usize, rng: &mut Rng) -> Vec<usize> {
    let total: usize = widths.iter().sum();
    if total > w {
        return widths.iter().map(|&wd| rng.random_range(0..=w - wd)).collect();
    }
    let free = w - total;
    let n = widths.len();
    let mut slots = sample(rng, free + n, n).into_vec();
    slots.sort_unstable();
    let mut starts = Vec::with_capacity(n);
    let mut used = 0;
    for (i, (&slot, &wd)) in slots.iter().zip(widths).enumerate() {
        starts.push(slot - i + used);
        used += wd;
    }
    starts
}

fn deadlines(
    x: &Tensor3,
    band_fraction: f64,
    count: CountRange,
    width: CountRange,
    rng: &mut Rng,
) -> Result<(Tensor3, Vec<Deadline>)> {
    if !(0.0..=1.0).contains(&band_fraction) {
        return Err(Error::Argument(format!(
            "band fraction must lie in [0, 1], got {band_fraction}"
        )));
    }
    count.validate("deadline count")?;
    width.validate("deadline width")?;
    let (h, w, b) = x.dims();
    let mut y = x.clone();
    let mut report = Vec::new();
    for band in choose_bands(b, band_fraction, rng) {
        let n = count.sample(rng);
        let widths: Vec<usize> = (0..n).map(|_| width.sample(rng).clamp(1, w)).collect();
        let starts = place_runs(&widths, w, rng);
        for (&start, &wd) in starts.iter().zip(&widths) {
            for i in 0..h {
                for j in start..start + wd {
                    y.set(i, j, band, 0.0);
                }
            }
            report.push(Deadline {
                band,
                start,
                width: wd,
            });
        }
    }
    Ok((y, report))
}

/// Zeroes full-height column runs in `floor(band_fraction * b)` random bands.
/// Each chosen band gets a count drawn from `count` and per-run widths drawn
/// from `width` (clipped to the image width); runs do not overlap whenever
/// they fit side by side.
pub fn add_deadlines(
    x: &Tensor3,
    band_fraction: f64,
    count: CountRange,
    width: CountRange,
    rng: &mut Rng,
) -> Result<Tensor3> {
    Ok(deadlines(x, band_fraction, count, width, rng)?.0)
}

/// Adds `offset` to every pixel of one column of one band.
pub fn apply_stripe(x: &mut Tensor3, stripe: &Stripe) -> Result<()> {
    let (h, w, b) = x.dims();
    if stripe.band >= b || stripe.column >= w {
        return Err(Error::Range(format!(
            "stripe at band {}, column {} in {h}x{w}x{b}",
            stripe.band, stripe.column
        )));
    }
    for i in 0..h {
        let v = x.get(i, stripe.column, stripe.band);
        x.set(i, stripe.column, stripe.band, v + stripe.offset);
    }
    Ok(())
}

fn stripes(
    x: &Tensor3,
    band_fraction: f64,
    count: CountRange,
    amplitude: f64,
    rng: &mut Rng,
) -> Result<(Tensor3, Vec<Stripe>)> {
    if !(0.0..=1.0).contains(&band_fraction) {
        return Err(Error::Argument(format!(
            "band fraction must lie in [0, 1], got {band_fraction}"
        )));
    }
    count.validate("stripe count")?;
    let (_, w, b) = x.dims();
    let mut y = x.clone();
    let mut report = Vec::new();
    for band in choose_bands(b, band_fraction, rng) {
        let n = count.sample(rng).min(w);
        let mut cols = sample(rng, w, n).into_vec();
        cols.sort_unstable();
        for column in cols {
            let offset = if amplitude > 0.0 {
                rng.random_range(-amplitude..=amplitude)
            } else {
                0.0
            };
            let s = Stripe {
                band,
                column,
                offset,
            };
            apply_stripe(&mut y, &s)?;
            report.push(s);
        }
    }
    Ok((y, report))
}

/// Adds column stripes to `floor(band_fraction * b)` random bands: per band a
/// count drawn from `count` of distinct columns, each shifted by its own offset
/// uniform in `[-amplitude, amplitude]`.
pub fn add_stripes(
    x: &Tensor3,
    band_fraction: f64,
    count: CountRange,
    amplitude: f64,
    rng: &mut Rng,
) -> Result<Tensor3> {
    Ok(stripes(x, band_fraction, count, amplitude, rng)?.0)
}

/// Clean test cube of tubal rank at most `rank`: the t-product of Gaussian
/// `h x rank x b` and `rank x w x b` factors, min-max scaled to `[0, 1]`.
pub fn synthetic_low_tubal_rank(h: usize, w: usize, b: usize, rank: usize, seed: u64) -> Result<Tensor3> {
    if h == 0 || w == 0 || b == 0 || rank == 0 {
        return Err(Error::Argument(format!(
            "synthetic cube needs positive sizes, got {h}x{w}x{b} with rank {rank}"
        )));
    }
    let mut g = rng(seed);
    let a = gaussian_tensor(h, rank, b, 1.0, &mut g);
    let c = gaussian_tensor(rank, w, b, 1.0, &mut g);
    let t = t_product(&a, &c)?;
    let (lo, hi) = t.min_max();
    Ok(if hi > lo {
        t.map(|v| (v - lo) / (hi - lo))
    } else {
        Tensor3::zeros(h, w, b)
    })
}

/// [`make_case`] plus a record of every impulse, deadline and stripe.
pub fn make_case_with_report(x: &Tensor3, spec: &NoiseSpec) -> Result<(Tensor3, CorruptionReport)> {
    spec.validate()?;
    let mut report = CorruptionReport::default();
    let mut y = add_gaussian(x, spec.gaussian_std, &mut substream(spec.seed, GAUSSIAN_STREAM))?;
    if spec.case.has_impulse() {
        let (t, n) = impulse(&y, spec.impulse_rate, &mut substream(spec.seed, IMPULSE_STREAM))?;
        y = t;
        report.impulse_count = n;
    }
    if spec.case.has_deadlines() {
        let (t, d) = deadlines(
            &y,
            spec.deadline_band_fraction,
            spec.deadline_count,
            spec.deadline_width,
            &mut substream(spec.seed, DEADLINE_STREAM),
        )?;
        y = t;
        report.deadlines = d;
    }
    if spec.case.has_stripes() {
        let (t, s) = stripes(
            &y,
            spec.stripe_band_fraction,
            spec.stripe_count,
            spec.stripe_amplitude,
            &mut substream(spec.seed, STRIPE_STREAM),
        )?;
        y = t;
        report.stripes = s;
    }
    Ok((y, report))
}

/// Corrupts a clean cube. Generators run in the order Gaussian, impulse,
/// deadlines, stripes, each on its own stream derived from `spec.seed`.
pub fn make_case(x: &Tensor3, spec: &NoiseSpec) -> Result<Tensor3> {
    Ok(make_case_with_report(x, spec)?.0)
}
