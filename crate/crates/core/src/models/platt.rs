//! Platt scaling: `p = sigmoid(a * margin + b)` fitted by Newton's method
//! on smoothed targets.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlattFit {
    pub a: f64,
    pub b: f64,
    pub iterations: usize,
}

fn nll(data: &[(f64, f64)], a: f64, b: f64) -> f64 {
    data.iter()
        .map(|&(f, t)| {
            let z = a * f + b;
            // -[t log s(z) + (1-t) log(1-s(z))] = log(1+e^z) - t z
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - t * z
        })
        .sum()
}

/// Fits `(a, b)` on `(margin, label)` pairs. With no usable data the identity
/// calibration `a = 1, b = 0` is returned.
pub fn fit_platt(pairs: &[(f64, u8)]) -> PlattFit {
    let n_pos = pairs.iter().filter(|p| p.1 == 1).count() as f64;
    let n_neg = pairs.len() as f64 - n_pos;
    if pairs.is_empty() {
        return PlattFit {
            a: 1.0,
            b: 0.0,
            iterations: 0,
        };
    }
    let t_pos = (n_pos + 1.0) / (n_pos + 2.0);
    let t_neg = 1.0 / (n_neg + 2.0);
    let data: Vec<(f64, f64)> = pairs
        .iter()
        .map(|&(f, y)| (f, if y == 1 { t_pos } else { t_neg }))
        .collect();
    let (mut a, mut b) = (0.0, ((n_pos + 1.0) / (n_neg + 1.0)).ln());
    let mut loss = nll(&data, a, b);
    let mut it = 0;
    while it < 100 {
        it += 1;
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for &(f, t) in &data {
            let p = 1.0 / (1.0 + (-(a * f + b)).exp());
            let d = p - t;
            let w = p * (1.0 - p);
            ga += d * f;
            gb += d;
            haa += w * f * f;
            hab += w * f;
            hbb += w;
        }
        if ga.abs() < 1e-10 && gb.abs() < 1e-10 {
            break;
        }
        let det = haa * hbb - hab * hab;
        let da = -(hbb * ga - hab * gb) / det;
        let db = -(haa * gb - hab * ga) / det;
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nl = nll(&data, na, nb);
            if nl < loss + 1e-4 * step * (ga * da + gb * db) {
                a = na;
                b = nb;
                loss = nl;
                improved = true;
                break;
            }
            step /= 2.0;
        }
        if !improved {
            break;
        }
    }
    PlattFit { a, b, iterations: it }
}
