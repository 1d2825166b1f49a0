//! Adaptive Gauss–Kronrod (7, 15) quadrature and fixed-grid trapezoid rule.

#[allow(clippy::excessive_precision)]
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
#[allow(clippy::excessive_precision)]
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
/// Gauss weights for the odd-indexed Kronrod nodes.
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_DEPTH: u32 = 40;

/// Kronrod estimate and |Kronrod - Gauss| on `[a, b]`.
fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Integrates `f` over `[a, b]` to absolute tolerance `abs_tol` by recursive
/// bisection. Returns the estimate and the accumulated error bound.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64) -> (f64, f64) {
    if a == b {
        return (0.0, 0.0);
    }
    recurse(&mut f, a, b, abs_tol, 0)
}

fn recurse<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: f64, depth: u32) -> (f64, f64) {
    let (val, err) = gk15(f, a, b);
    if err <= tol || depth >= MAX_DEPTH || !val.is_finite() {
        return (val, err);
    }
    let m = 0.5 * (a + b);
    let (l, el) = recurse(f, a, m, 0.5 * tol, depth + 1);
    let (r, er) = recurse(f, m, b, 0.5 * tol, depth + 1);
    (l + r, el + er)
}

/// Uniform grid of `points` nodes on `[a, b]`, endpoints included.
pub fn uniform_grid(a: f64, b: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2, "grid needs at least two points");
    let h = (b - a) / (points - 1) as f64;
    (0..points)
        .map(|k| if k + 1 == points { b } else { a + h * k as f64 })
        .collect()
}

/// Trapezoid rule over arbitrary increasing nodes.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_is_exact_for_high_degree_polynomials() {
        // G7K15 integrates degree-22 polynomials exactly on one panel
        let (v, _) = gk15(&mut |x: f64| x.powi(22) + 3.0 * x.powi(7), 0.0, 1.0);
        assert!((v - (1.0 / 23.0 + 3.0 / 8.0)).abs() < 1e-15);
    }

    #[test]
    fn adaptive_handles_peaks() {
        let (v, e) = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-10);
        let exact = 2.0 * (1.0 / 1e-4f64.sqrt()) * (1.0 / 1e-4f64.sqrt()).atan();
        assert!((v - exact).abs() < 1e-8, "{v} vs {exact}, est {e}");
    }

    #[test]
    fn trapezoid_on_linear_is_exact() {
        let xs = uniform_grid(0.0, 2.0, 17);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 1.0).collect();
        assert!((trapezoid(&xs, &ys) - 8.0).abs() < 1e-14);
        assert_eq!(*xs.last().unwrap(), 2.0);
    }
}
