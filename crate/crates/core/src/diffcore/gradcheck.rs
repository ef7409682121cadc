use super::ParameterSet;

/// Central-difference settings.
#[derive(Clone, Copy, Debug)]
pub struct FdConfig {
    pub step: f64,
    /// A coordinate is treated as a non-differentiable point when its forward
    /// and backward one-sided slopes still differ by more than this fraction
    /// of the central slope after the step has been shrunk twice.
    pub kink_tolerance: f64,
    /// Check at most this many evenly strided coordinates per parameter.
    pub max_coords_per_param: Option<usize>,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            kink_tolerance: 1e-3,
            max_coords_per_param: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamFdReport {
    pub name: String,
    pub checked: usize,
    pub kinks: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub params: Vec<ParamFdReport>,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub checked: usize,
    pub kinks: usize,
}

impl FdReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tolerance
    }
}

/// Step reductions tried before a coordinate is declared a kink.
const KINK_RETRIES: usize = 3;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss_fn` around
/// `params`. Coordinates sitting on a kink are counted but excluded from the
/// error statistics.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &ParameterSet<f64>,
    analytic: &ParameterSet<f64>,
    cfg: FdConfig,
) -> FdReport
where
    F: FnMut(&ParameterSet<f64>) -> f64,
{
    let h = cfg.step;
    let base = loss_fn(params);
    let mut probe = params.clone();
    let mut reports = Vec::new();
    for (name, tensor) in params.iter() {
        let n = tensor.len();
        let stride = match cfg.max_coords_per_param {
            Some(limit) if limit > 0 && n > limit => n.div_ceil(limit),
            _ => 1,
        };
        let grad = analytic.get(name);
        let mut report = ParamFdReport {
            name: name.to_string(),
            checked: 0,
            kinks: 0,
            max_rel_err: 0.0,
            mean_rel_err: 0.0,
        };
        let mut err_sum = 0.0;
        for i in (0..n).step_by(stride) {
            let orig = tensor.data()[i];
            let mut central = None;
            let mut step = h;
            for _ in 0..KINK_RETRIES {
                probe.get_mut(name).unwrap().data_mut()[i] = orig + step;
                let plus = loss_fn(&probe);
                probe.get_mut(name).unwrap().data_mut()[i] = orig - step;
                let minus = loss_fn(&probe);
                let c = (plus - minus) / (2.0 * step);
                let forward = (plus - base) / step;
                let backward = (base - minus) / step;
                // smooth curvature shrinks the one-sided gap with the step, a kink does not
                if (forward - backward).abs() <= cfg.kink_tolerance * c.abs().max(1e-8) {
                    central = Some(c);
                    break;
                }
                step /= 4.0;
            }
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            let Some(central) = central else {
                report.kinks += 1;
                continue;
            };
            let a = grad.map_or(0.0, |g| g.data()[i]);
            let err = relative_error(a, central);
            report.max_rel_err = report.max_rel_err.max(err);
            err_sum += err;
            report.checked += 1;
        }
        if report.checked > 0 {
            report.mean_rel_err = err_sum / report.checked as f64;
        }
        reports.push(report);
    }
    let checked: usize = reports.iter().map(|r| r.checked).sum();
    let kinks = reports.iter().map(|r| r.kinks).sum();
    let max_rel_err = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let mean_rel_err = if checked > 0 {
        reports
            .iter()
            .map(|r| r.mean_rel_err * r.checked as f64)
            .sum::<f64>()
            / checked as f64
    } else {
        0.0
    };
    FdReport {
        params: reports,
        max_rel_err,
        mean_rel_err,
        checked,
        kinks,
    }
}
