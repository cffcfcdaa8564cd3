use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Result, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared (non-smooth ones excluded).
    pub coords_checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Coordinates where the function has a kink within `eps`, so finite
    /// differences do not estimate a derivative.
    pub nonsmooth: Vec<(String, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub eps: f64,
    pub max_coords: usize,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
    pub seed: u64,
    /// When set, a coordinate whose central differences at `eps` and
    /// `eps / 2` disagree by more than this relative amount is reported as
    /// non-smooth instead of compared.
    pub kink_tolerance: Option<f64>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, max_coords: 200, floor: 1e-6, seed: 0, kink_tolerance: None }
    }
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares reverse-mode gradients of `f` with central differences
/// `(f(p + eps) - f(p - eps)) / 2 eps` on up to `max_coords` coordinates drawn
/// with `seed`.
///
/// The relative error of one coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn gradcheck<F>(params: &ParamStore, mut f: F, options: GradcheckOptions) -> Result<GradcheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Tape, Var)>,
{
    let GradcheckOptions { eps, max_coords, floor, seed, kink_tolerance } = options;
    let (mut tape, loss) = f(params)?;
    tape.backward(loss)?;
    let analytic = tape.param_grads();

    let mut coords: Vec<(String, usize)> = analytic
        .iter()
        .flat_map(|(name, g)| (0..g.len()).map(move |i| (name.clone(), i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    coords.shuffle(&mut rng);
    coords.truncate(max_coords);

    let mut probe = params.clone();
    let mut report = GradcheckReport { max_rel_error: 0.0, coords_checked: 0, worst: None, nonsmooth: Vec::new() };
    for (name, i) in coords {
        let original = params.get(&name).expect("gradient implies parameter").as_slice().expect("standard layout")[i];
        let mut central = |h: f64| -> Result<f64> {
            let mut at = |v: f64| -> Result<f64> {
                probe.get_mut(&name).unwrap().as_slice_mut().expect("standard layout")[i] = v;
                let (t, l) = f(&probe)?;
                t.scalar(l)
            };
            let d = (at(original + h)? - at(original - h)?) / (2.0 * h);
            probe.get_mut(&name).unwrap().as_slice_mut().expect("standard layout")[i] = original;
            Ok(d)
        };
        let numeric = central(eps)?;
        if let Some(tol) = kink_tolerance {
            if rel(numeric, central(eps / 2.0)?, floor) > tol {
                report.nonsmooth.push((name, i));
                continue;
            }
        }
        let a = analytic[&name].as_slice().expect("standard layout")[i];
        let err = rel(a, numeric, floor);
        report.coords_checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((name.clone(), i));
        }
    }
    Ok(report)
}
