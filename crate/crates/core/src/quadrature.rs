//! Globally adaptive Gauss–Kronrod (7/15) quadrature on finite and
//! infinite intervals.
//!
//! Infinite tails are mapped onto `[0, 1)` with `x = a ± s·t/(1 − t)`. All
//! segments of one integral share a single priority queue, so the
//! tolerance applies to the total rather than per segment.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 0.0,
            max_intervals: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
enum Map {
    Finite,
    /// `x = origin + scale·t/(1 − t)`
    Right { origin: f64, scale: f64 },
    /// `x = origin − scale·t/(1 − t)`
    Left { origin: f64, scale: f64 },
}

impl Map {
    #[inline]
    fn apply(self, t: f64) -> (f64, f64) {
        match self {
            Map::Finite => (t, 1.0),
            Map::Right { origin, scale } => {
                let u = 1.0 - t;
                (origin + scale * t / u, scale / (u * u))
            }
            Map::Left { origin, scale } => {
                let u = 1.0 - t;
                (origin - scale * t / u, scale / (u * u))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    a: f64,
    b: f64,
    map: Map,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, map: Map, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let eval = |t: f64| {
        let (x, jac) = map.apply(t);
        let y = f(x);
        if y == 0.0 {
            0.0
        } else {
            y * jac
        }
    };

    let fc = eval(center);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = eval(center - dx);
        let f2 = eval(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = res_k * 0.5;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (value, err)
}

impl Quadrature {
    pub fn with_tolerance(abs_tol: f64) -> Self {
        Self {
            abs_tol,
            ..Self::default()
        }
    }

    /// Integrates `f` over `[a, b]`; either end may be infinite.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<QuadResult> {
        if a.is_nan() || b.is_nan() {
            return Err(Error::invalid("integration bounds must not be NaN"));
        }
        if a == b {
            return Ok(QuadResult {
                value: 0.0,
                error: 0.0,
                intervals: 0,
            });
        }
        if a > b {
            let r = self.integrate(f, b, a)?;
            return Ok(QuadResult {
                value: -r.value,
                ..r
            });
        }
        let mut segs = Vec::new();
        match (a.is_finite(), b.is_finite()) {
            (true, true) => segs.push((a, b, Map::Finite)),
            (true, false) => segs.push((0.0, 1.0, Map::Right { origin: a, scale: 1.0 })),
            (false, true) => segs.push((0.0, 1.0, Map::Left { origin: b, scale: 1.0 })),
            (false, false) => {
                segs.push((0.0, 1.0, Map::Left { origin: 0.0, scale: 1.0 }));
                segs.push((0.0, 1.0, Map::Right { origin: 0.0, scale: 1.0 }));
            }
        }
        self.run(&f, segs)
    }

    /// Integrates `f` over the whole real line, splitting at `breakpoints`
    /// and mapping each tail with length scale `scale`.
    pub fn integrate_real_line<F: Fn(f64) -> f64>(
        &self,
        f: F,
        breakpoints: &[f64],
        scale: f64,
    ) -> Result<QuadResult> {
        let mut pts: Vec<f64> = breakpoints.iter().copied().filter(|p| p.is_finite()).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        if pts.is_empty() {
            pts.push(0.0);
        }
        let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
        let mut segs = Vec::with_capacity(pts.len() + 1);
        segs.push((
            0.0,
            1.0,
            Map::Left {
                origin: pts[0],
                scale,
            },
        ));
        for w in pts.windows(2) {
            segs.push((w[0], w[1], Map::Finite));
        }
        segs.push((
            0.0,
            1.0,
            Map::Right {
                origin: *pts.last().unwrap(),
                scale,
            },
        ));
        self.run(&f, segs)
    }

    fn run<F: Fn(f64) -> f64>(&self, f: &F, segs: Vec<(f64, f64, Map)>) -> Result<QuadResult> {
        let mut heap = BinaryHeap::new();
        let mut total = 0.0;
        let mut total_err = 0.0;
        for (a, b, map) in segs {
            let (value, error) = kronrod(f, map, a, b);
            total += value;
            total_err += error;
            heap.push(Piece {
                a,
                b,
                map,
                value,
                error,
            });
        }
        let target = |v: f64| self.abs_tol.max(self.rel_tol * v.abs());
        while total_err > target(total) && heap.len() < self.max_intervals {
            if !total.is_finite() {
                break;
            }
            let worst = heap.pop().expect("heap never empty");
            let mid = 0.5 * (worst.a + worst.b);
            if mid <= worst.a || mid >= worst.b {
                heap.push(worst);
                break;
            }
            let (v1, e1) = kronrod(f, worst.map, worst.a, mid);
            let (v2, e2) = kronrod(f, worst.map, mid, worst.b);
            total += v1 + v2 - worst.value;
            total_err += e1 + e2 - worst.error;
            heap.push(Piece {
                a: worst.a,
                b: mid,
                map: worst.map,
                value: v1,
                error: e1,
            });
            heap.push(Piece {
                a: mid,
                b: worst.b,
                map: worst.map,
                value: v2,
                error: e2,
            });
        }
        // Re-sum from scratch so running-sum drift never leaks into the result.
        let mut pieces = heap.into_vec();
        pieces.sort_by(|p, q| p.a.total_cmp(&q.a));
        let values: Vec<f64> = pieces.iter().map(|p| p.value).collect();
        let errors: Vec<f64> = pieces.iter().map(|p| p.error).collect();
        let value = crate::numeric::pairwise_sum(&values);
        let error = crate::numeric::pairwise_sum(&errors);
        if !value.is_finite() || error > target(value) {
            return Err(Error::QuadratureDiverged {
                estimate: value,
                error,
            });
        }
        Ok(QuadResult {
            value,
            error,
            intervals: pieces.len(),
        })
    }
}
