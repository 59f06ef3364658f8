//! Bracketed one-dimensional minimization: coarse log-grid scan, then
//! golden-section refinement around the best grid point.

#[derive(Debug, Clone, Copy)]
pub(crate) struct ScanMinimum {
    pub x: f64,
    pub value: f64,
    /// Best grid point sat on an end of the bracket.
    pub on_boundary: bool,
    /// Spread of objective values seen on the grid.
    pub range: f64,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

pub(crate) fn log_scan_golden<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, grid: usize) -> ScanMinimum {
    let (llo, lhi) = (lo.ln(), hi.ln());
    let g = |u: f64| f(u.exp());
    let pts: Vec<(f64, f64)> = (0..grid)
        .map(|i| {
            let u = llo + (lhi - llo) * i as f64 / (grid - 1) as f64;
            (u, g(u))
        })
        .collect();
    let (best, &(bu, bv)) = pts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("grid has points");
    let worst = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if best == 0 || best == grid - 1 {
        return ScanMinimum {
            x: bu.exp(),
            value: bv,
            on_boundary: true,
            range: worst - bv,
        };
    }
    let (mut a, mut b) = (pts[best - 1].0, pts[best + 1].0);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (g(c), g(d));
    while (b - a).abs() > 1e-13 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = g(d);
        }
    }
    let u = 0.5 * (a + b);
    let v = g(u);
    let (u, v) = if v <= bv { (u, v) } else { (bu, bv) };
    ScanMinimum {
        x: u.exp(),
        value: v,
        on_boundary: false,
        range: worst - v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_minimum() {
        let m = log_scan_golden(|x| (x.ln() - 2.0f64.ln()).powi(2) + 1.0, 0.01, 100.0, 50);
        assert!(!m.on_boundary);
        assert!((m.x - 2.0).abs() < 1e-6);
    }

    #[test]
    fn flags_boundary() {
        let m = log_scan_golden(|x| x, 0.01, 100.0, 50);
        assert!(m.on_boundary);
        assert!((m.x - 0.01).abs() < 1e-15);
    }
}
