//! Nelder-Mead downhill simplex for small fixed-dimension problems.

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Stop once the spread of objective values over the simplex drops below this.
    pub f_tol: f64,
    /// ...and every vertex is within this distance of the best one (max norm).
    pub x_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_evals: 10_000,
            f_tol: 1e-12,
            x_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexResult<const N: usize> {
    pub x: [f64; N],
    pub fx: f64,
    pub evals: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

pub fn minimize<const N: usize, F>(f: F, x0: [f64; N], step: [f64; N], opts: SimplexOptions) -> SimplexResult<N>
where
    F: Fn(&[f64; N]) -> f64,
{
    let eval = |x: &[f64; N]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pts: Vec<[f64; N]> = Vec::with_capacity(N + 1);
    pts.push(x0);
    for i in 0..N {
        let mut v = x0;
        v[i] += step[i];
        pts.push(v);
    }
    let mut vals: Vec<f64> = pts.iter().map(eval).collect();
    let mut evals = N + 1;

    loop {
        let mut order: Vec<usize> = (0..=N).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i]).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[N] - vals[0];
        let size = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= opts.f_tol && size <= opts.x_tol {
            return SimplexResult {
                x: pts[0],
                fx: vals[0],
                evals,
                converged: true,
            };
        }
        if evals >= opts.max_evals {
            return SimplexResult {
                x: pts[0],
                fx: vals[0],
                evals,
                converged: false,
            };
        }

        let mut centroid = [0.0; N];
        for p in &pts[..N] {
            for k in 0..N {
                centroid[k] += p[k] / N as f64;
            }
        }
        let along = |t: f64| {
            let mut out = [0.0; N];
            for k in 0..N {
                out[k] = centroid[k] + t * (pts[N][k] - centroid[k]);
            }
            out
        };

        let xr = along(-REFLECT);
        let fr = eval(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = along(-EXPAND);
            let fe = eval(&xe);
            evals += 1;
            if fe < fr {
                pts[N] = xe;
                vals[N] = fe;
            } else {
                pts[N] = xr;
                vals[N] = fr;
            }
            continue;
        }
        if fr < vals[N - 1] {
            pts[N] = xr;
            vals[N] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[N] {
            let x = along(-CONTRACT);
            (x, eval(&x))
        } else {
            let x = along(CONTRACT);
            (x, eval(&x))
        };
        evals += 1;
        if fc < vals[N].min(fr) {
            pts[N] = xc;
            vals[N] = fc;
            continue;
        }
        let best = pts[0];
        for i in 1..=N {
            for (x, b) in pts[i].iter_mut().zip(best) {
                *x = b + SHRINK * (*x - b);
            }
            vals[i] = eval(&pts[i]);
        }
        evals += N;
    }
}
